"""Run configuration: pydantic models, TOML loading and dumping.

A config file is TOML with one table per run kind (``[train]``,
``[symmetry]``). String values may reference environment variables as
``${VAR}``; a ``.env`` file in the working directory is loaded first.
"""

from __future__ import annotations

import logging
import math
import os
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple, Type, TypeVar, Union

import tomli_w
from dotenv import load_dotenv
from pydantic import BaseModel, Field, ValidationError, model_validator

from dataio.annotations import LabelKind
from dataio.formats import AnnotationFormat
from detector.assigners import SCORE_GATE, SCORE_TOPK
from detector.model import InferenceHead, ModelConfig
from losses.composition import LossMode, LossWeights
from synthesis.scenes import SceneConfig, ShapeFamily
from utils.errors import ConfigError
from views.transforms import DEFAULT_ROTATION_RANGE, DEFAULT_SCALE_RANGE, PaddingMode, ViewMode

ConfigModel = TypeVar("ConfigModel", bound=BaseModel)


class SupervisionMode(str, Enum):
    """Label granularity a run trains from."""
    RBOX = "rbox"
    HBOX = "hbox"
    POINT = "point"
    MIXED = "mixed"


class PointPipeline(str, Enum):
    SUBNET = "subnet"
    END_TO_END = "end_to_end"


class DataConfig(BaseModel):
    scene: SceneConfig = Field(default_factory=SceneConfig, description="Synthetic scene generator settings")
    train_images: int = Field(default=200, ge=1, description="Synthetic training images")
    test_images: int = Field(default=50, ge=0, description="Synthetic held-out images")
    train_annotations: Optional[str] = Field(default=None, description="Training labels on disk instead of scenes")
    test_annotations: Optional[str] = Field(default=None, description="Held-out box labels on disk")
    image_dir: Optional[str] = Field(default=None, description="Directory of <image_id>.png files")
    annotation_format: AnnotationFormat = Field(default=AnnotationFormat.INTERNAL)
    label_proportions: Dict[LabelKind, float] = Field(
        default_factory=dict, description="Per-instance label kind distribution for mixed runs, e.g. point=0.7")
    noise: float = Field(default=0.0, ge=0.0, lt=1.0, description="Label noise level sigma for HBoxes / points")
    random_rotate: bool = Field(default=False, description="Random quarter-turn rotation of training samples")

    @model_validator(mode="after")
    def _check(self) -> "DataConfig":
        if (self.train_annotations or self.test_annotations) and not self.image_dir:
            raise ConfigError("Annotations on disk need `image_dir` to find their images")
        if self.label_proportions:
            total = sum(self.label_proportions.values())
            if not math.isclose(total, 1.0, abs_tol=1e-6):
                raise ConfigError(f"label_proportions must sum to 1, got {total}")
        return self

    @property
    def synthetic(self) -> bool:
        return self.train_annotations is None


class ViewConfig(BaseModel):
    rotation_range: Tuple[float, float] = Field(default=DEFAULT_ROTATION_RANGE,
                                                description="Rotation view angle range in radians")
    scale_range: Tuple[float, float] = Field(default=DEFAULT_SCALE_RANGE, description="Scale view factor range")
    padding: PaddingMode = Field(default=PaddingMode.REFLECTION, description="Border fill of rotate / scale views")
    snap: bool = Field(default=True, description="Use the periodic snap loss for consistency terms")

    @model_validator(mode="after")
    def _check(self) -> "ViewConfig":
        low, high = self.rotation_range
        if not low < high:
            raise ConfigError(f"rotation_range must be increasing, got {self.rotation_range}")
        low, high = self.scale_range
        if not 0.0 < low < high:
            raise ConfigError(f"scale_range must be an increasing positive pair, got {self.scale_range}")
        return self


class SubnetConfig(BaseModel):
    pipeline: PointPipeline = Field(default=PointPipeline.SUBNET,
                                    description="`subnet` feeds suggestions to the dense detector; "
                                                "`end_to_end` trains the point subnet as the detector")
    fusion: bool = Field(default=True, description="Gated pyramid fusion and box scaling")
    suggestion_start_epoch: int = Field(default=1, ge=0, description="First epoch that uses point suggestions")
    score_gate: float = Field(default=SCORE_GATE, gt=0.0, description="L1 gate of the score-based assigner")
    score_topk: int = Field(default=SCORE_TOPK, ge=1, description="Locations per object of the score-based assigner")


class OptimConfig(BaseModel):
    lr: float = Field(default=5e-5, gt=0.0, description="AdamW learning rate")
    weight_decay: float = Field(default=0.05, ge=0.0)
    warmup_iters: int = Field(default=500, ge=0, description="Linear warm-up length in iterations")
    warmup_ratio: float = Field(default=1.0 / 3.0, gt=0.0, le=1.0, description="Starting fraction of the lr")
    decay_epoch: Optional[int] = Field(default=None, ge=1, description="Epoch of the single lr decay "
                                                                      "(defaults to 11/12 of the run)")
    decay_gamma: float = Field(default=0.1, gt=0.0, le=1.0)
    grad_clip: Optional[float] = Field(default=35.0, gt=0.0, description="Max gradient norm")


class TrainConfig(BaseModel):
    mode: SupervisionMode = Field(default=SupervisionMode.HBOX, description="Label granularity")
    epochs: int = Field(default=12, ge=1)
    batch_size: int = Field(default=2, ge=1)
    seed: int = Field(default=0, description="Seed of every random stream of the run")
    threads: Optional[int] = Field(default=None, ge=1, description="torch intra-op threads")
    output_dir: str = Field(default="runs/default", description="Checkpoint, metrics log and resolved config")
    channels: int = Field(default=32, gt=0)
    head_depth: int = Field(default=2, ge=0)
    rotation_agnostic: List[int] = Field(default_factory=list, description="Category ids whose angle is ignored")
    score_thresh: float = Field(default=0.05, ge=0.0, le=1.0, description="Evaluation score threshold")
    nms_thresh: float = Field(default=0.1, ge=0.0, le=1.0, description="Evaluation rotated NMS IoU threshold")
    eval_every: int = Field(default=1, ge=0, description="Evaluate every n epochs; 0 evaluates only the last")
    weights: LossWeights = Field(default_factory=LossWeights)
    optim: OptimConfig = Field(default_factory=OptimConfig)
    data: DataConfig = Field(default_factory=DataConfig)
    views: ViewConfig = Field(default_factory=ViewConfig)
    subnet: SubnetConfig = Field(default_factory=SubnetConfig)

    @model_validator(mode="after")
    def _check(self) -> "TrainConfig":
        if self.mode is SupervisionMode.MIXED and self.data.synthetic and not self.data.label_proportions:
            raise ConfigError("mode 'mixed' needs per-instance label kinds: set data.label_proportions "
                              "or load mixed annotations from disk")
        if self.mode is SupervisionMode.RBOX and self.data.noise > 0:
            raise ConfigError("Label noise is defined for HBox and point labels only")
        if self.subnet.pipeline is PointPipeline.END_TO_END and self.mode is not SupervisionMode.POINT:
            raise ConfigError("The end_to_end point pipeline trains from point labels only (mode = 'point')")
        return self

    @property
    def uses_points(self) -> bool:
        return self.mode in (SupervisionMode.POINT, SupervisionMode.MIXED)

    @property
    def end_to_end(self) -> bool:
        return self.subnet.pipeline is PointPipeline.END_TO_END and self.mode is SupervisionMode.POINT

    @property
    def view_mode(self) -> ViewMode:
        if self.end_to_end:
            return ViewMode.POINT
        return ViewMode.UNIFIED if self.uses_points else ViewMode.HBOX

    @property
    def loss_mode(self) -> LossMode:
        if self.end_to_end:
            return LossMode.POINT_SYNTHESIS
        return LossMode.UNIFIED if self.uses_points else LossMode.HBOX_CONSISTENCY

    @property
    def decay_epoch(self) -> int:
        if self.optim.decay_epoch is not None:
            return self.optim.decay_epoch
        return max(1, round(self.epochs * 11 / 12))

    def detector_config(self, class_names: List[str], image_size: int) -> ModelConfig:
        return ModelConfig(
            class_names=list(class_names),
            image_size=image_size,
            channels=self.channels,
            head_depth=self.head_depth,
            point_subnet=self.uses_points,
            fusion=self.subnet.fusion,
            rotation_agnostic=list(self.rotation_agnostic),
            inference_head=InferenceHead.POINT if self.end_to_end else InferenceHead.DENSE,
        )


class SymmetryConfig(BaseModel):
    scene: SceneConfig = Field(
        default_factory=lambda: SceneConfig(image_size=64, size_range=(20.0, 40.0), aspect_range=(1.6, 3.0),
                                            families=[ShapeFamily.ELLIPSE, ShapeFamily.KITE, ShapeFamily.ARROW],
                                            noise_std=0.01, texture=False),
        description="Crop canvas and shape families; each crop holds one centred shape")
    num_objects: int = Field(default=500, ge=2, description="Crops rendered in total")
    holdout_fraction: float = Field(default=0.2, gt=0.0, lt=1.0)
    iterations: int = Field(default=3000, ge=0)
    batch_size: int = Field(default=16, ge=1)
    lr: float = Field(default=1e-3, gt=0.0)
    lambda_flip: float = Field(default=0.05, ge=0.0, description="Flip loss weight (also its view probability)")
    rotation_range: Tuple[float, float] = Field(default=DEFAULT_ROTATION_RANGE)
    tolerance: float = Field(default=0.1, gt=0.0, description="Angular error counted as recovered, radians")
    pass_fraction: float = Field(default=0.9, gt=0.0, le=1.0)
    seed: int = 0
    asymmetric: bool = Field(default=False, description="Asymmetric control shapes instead of symmetric ones")


def expand_env_vars_in_toml(config: Dict[str, Any]) -> Dict[str, Any]:
    """Recursively replace ${VAR} in strings with environment values."""
    def expand(value):
        if isinstance(value, str):
            return os.path.expandvars(value)
        elif isinstance(value, dict):
            return {k: expand(v) for k, v in value.items()}
        elif isinstance(value, list):
            return [expand(v) for v in value]
        else:
            return value

    return expand(config)


def _merge(base: Dict[str, Any], overrides: Mapping[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in overrides.items():
        if isinstance(value, Mapping) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def read_toml(path: Union[str, Path]) -> Dict[str, Any]:
    path = Path(path)
    load_dotenv()
    try:
        with open(path, "rb") as f:
            return expand_env_vars_in_toml(tomllib.load(f))
    except FileNotFoundError as e:
        raise ConfigError(f"Config file {path} not found") from e
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}") from e


def load_config(path: Optional[Union[str, Path]] = None, section: str = "train",
                model: Type[ConfigModel] = TrainConfig,
                overrides: Optional[Mapping[str, Any]] = None) -> ConfigModel:
    """Validate one table of a TOML file (defaults when `path` is None).

    Args:
        overrides: nested values applied on top of the file, e.g. from CLI flags.

    Raises:
        ConfigError: unreadable file or invalid values.
    """
    raw: Dict[str, Any] = {}
    if path is not None:
        document = read_toml(path)
        raw = document.get(section, {})
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: [{section}] must be a table")
    raw = _merge(raw, overrides or {})
    try:
        return model.model_validate(raw)
    except ConfigError:
        raise
    except ValidationError as e:
        logging.error(f"Invalid [{section}] configuration: {e}")
        raise ConfigError(f"Invalid [{section}] configuration:\n{e}") from e


def dump_config(config: BaseModel, path: Union[str, Path], section: str = "train") -> Path:
    """Write the resolved config so the run can be repeated from its output directory."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = config.model_dump(mode="json", exclude_none=True)
    with open(path, "wb") as f:
        tomli_w.dump({section: payload}, f)
    return path
