"""Training samples: images with weak labels, and the exact boxes they came from."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np
import torch

from dataio.annotations import AnnotationSet, ImageAnnotations
from dataio.formats import AnnotationFormat, load_annotations
from dataio.images import load_image
from dataio.protocols import degrade, inject_noise, mix_labels
from initialize_app.config import DataConfig, SupervisionMode, TrainConfig
from synthesis.scenes import gen_dataset
from utils.errors import DataError
from views.transforms import PaddingMode, ViewKind, ViewTransform, apply_view

PIXEL_MEAN = 0.5
PIXEL_STD = 0.25


@dataclass
class Sample:
    image: np.ndarray  # (H, W, 3) in [0, 1]
    annotations: ImageAnnotations

    @property
    def image_id(self) -> str:
        return self.annotations.image_id


@dataclass
class SampleSet:
    classes: List[str]
    samples: List[Sample]

    def __len__(self) -> int:
        return len(self.samples)

    def __getitem__(self, idx: int) -> Sample:
        return self.samples[idx]

    def annotation_set(self) -> AnnotationSet:
        return AnnotationSet(list(self.classes), [s.annotations for s in self.samples])

    @property
    def image_size(self) -> int:
        if not self.samples:
            raise DataError("Empty sample set has no image size")
        return max(self.samples[0].annotations.width, self.samples[0].annotations.height)

    @classmethod
    def from_arrays(cls, images: Sequence[np.ndarray], annotations: AnnotationSet) -> "SampleSet":
        if len(images) != len(annotations):
            raise DataError(f"{len(images)} images for {len(annotations)} annotated images")
        return cls(list(annotations.classes), [Sample(img, anns) for img, anns in zip(images, annotations)])


def to_batch(images: Sequence[np.ndarray]) -> torch.Tensor:
    """(B, 3, H, W) float32 network input."""
    stacked = np.stack([np.asarray(img, dtype=np.float32) for img in images])
    return torch.from_numpy((stacked - PIXEL_MEAN) / PIXEL_STD).permute(0, 3, 1, 2).contiguous()


def weaken_labels(annotations: AnnotationSet, mode: SupervisionMode, data: DataConfig,
                  rng: np.random.Generator) -> AnnotationSet:
    """Turn box annotations into the labels a run of `mode` trains from, with optional noise."""
    mode = SupervisionMode(mode)
    if mode is SupervisionMode.RBOX:
        return annotations
    if mode is SupervisionMode.HBOX:
        weak = degrade(annotations, "hbox")
    elif mode is SupervisionMode.POINT:
        weak = degrade(annotations, "point")
    elif data.label_proportions:
        weak = mix_labels(annotations, data.label_proportions, rng)
    else:
        weak = annotations
    if data.noise > 0:
        weak = inject_noise(weak, data.noise, rng, reference=annotations)
    return weak


def _load_split(data: DataConfig, path: str) -> Tuple[List[np.ndarray], AnnotationSet]:
    classes = data.scene.class_names if data.annotation_format is AnnotationFormat.DOTA_TXT else None
    annotations = load_annotations(path, data.annotation_format, classes)
    image_dir = Path(data.image_dir)
    images = [load_image(image_dir / f"{img.image_id}.png") for img in annotations]
    return images, annotations


def build_datasets(cfg: TrainConfig, rng: np.random.Generator) -> Tuple[SampleSet, Optional[SampleSet]]:
    """Training samples carrying weak labels, and held-out samples carrying exact boxes."""
    data = cfg.data
    if data.synthetic:
        images, exact = gen_dataset(data.scene, data.train_images, rng, prefix="train")
        test = None
        if data.test_images:
            test_images, test_anns = gen_dataset(data.scene, data.test_images, rng, prefix="test")
            test = SampleSet.from_arrays(test_images, test_anns)
    else:
        images, exact = _load_split(data, data.train_annotations)
        test = SampleSet.from_arrays(*_load_split(data, data.test_annotations)) if data.test_annotations else None

    weak = weaken_labels(exact, cfg.mode, data, rng)
    train = SampleSet.from_arrays(images, weak)
    kinds = {}
    for img in weak:
        for kind in img.kinds():
            kinds[kind.value] = kinds.get(kind.value, 0) + 1
    logging.info(f"Training on {len(train)} images with labels {kinds}; "
                 f"{len(test) if test is not None else 0} held-out images")
    return train, test


def random_quarter_turn(sample: Sample, rng: np.random.Generator,
                        padding: PaddingMode = PaddingMode.REFLECTION) -> Tuple[Sample, Optional[ViewTransform]]:
    """Rotate by a random multiple of pi/2; axis-aligned labels stay axis-aligned and exact."""
    turns = int(rng.integers(4))
    if turns == 0:
        return sample, None
    t = ViewTransform(ViewKind.ROTATE, angle=turns * math.pi / 2)
    image, annotations, _ = apply_view(sample.image, sample.annotations, t, padding)
    return Sample(image, annotations), t


def iterate_batches(num_samples: int, batch_size: int, rng: np.random.Generator) -> Iterator[List[int]]:
    order = rng.permutation(num_samples)
    for start in range(0, num_samples, batch_size):
        yield [int(i) for i in order[start:start + batch_size]]
