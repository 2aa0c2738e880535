"""Desk-scale ablation studies: one training run per variant, compared by AP50."""

from __future__ import annotations

import logging
import math
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import pandas as pd

from initialize_app.config import SupervisionMode, TrainConfig
from training.inference import scale_by_size, scale_spread
from training.trainer import TrainResult, train
from views.transforms import DEFAULT_ROTATION_RANGE, PaddingMode


class AblationStudy(str, Enum):
    LAMBDA = "lambda"
    ROTATION_RANGE = "rotation_range"
    PADDING = "padding"
    SNAP = "snap"
    NOISE = "noise"
    FUSION = "fusion"
    MIXED = "mixed"


LAMBDA_VALUES = (0.0, 0.05, 0.1)
ROTATION_RANGES = {
    "pi/4..3pi/4": DEFAULT_ROTATION_RANGE,
    "-pi..pi": (-math.pi, math.pi),
    "-pi/4..pi/4": (-math.pi / 4, math.pi / 4),
}
NOISE_LEVELS = (0.0, 0.1, 0.3)
MIXED_POINT_SHARE = 0.7


def _update(cfg: TrainConfig, changes: Dict[str, Any]) -> TrainConfig:
    """Deep-update and re-validate a config."""
    payload = cfg.model_dump()
    for dotted, value in changes.items():
        target = payload
        *parents, leaf = dotted.split(".")
        for key in parents:
            target = target[key]
        target[leaf] = value
    return TrainConfig.model_validate(payload)


def study_variants(study: Union[AblationStudy, str], base: TrainConfig) -> List[Tuple[str, TrainConfig]]:
    """Named configs of one study, all derived from `base`."""
    study = AblationStudy(study)
    if study is AblationStudy.LAMBDA:
        return [(f"lambda={v:g}", _update(base, {"weights.lambda_flip": v})) for v in LAMBDA_VALUES]
    if study is AblationStudy.ROTATION_RANGE:
        return [(name, _update(base, {"views.rotation_range": r})) for name, r in ROTATION_RANGES.items()]
    if study is AblationStudy.PADDING:
        return [(p.value, _update(base, {"views.padding": p})) for p in PaddingMode]
    if study is AblationStudy.SNAP:
        return [(f"snap={flag}", _update(base, {"views.snap": flag})) for flag in (True, False)]
    if study is AblationStudy.NOISE:
        mode = base.mode if base.mode is not SupervisionMode.RBOX else SupervisionMode.HBOX
        return [(f"{mode.value} sigma={s:g}", _update(base, {"mode": mode, "data.noise": s})) for s in NOISE_LEVELS]
    if study is AblationStudy.FUSION:
        point = {"mode": SupervisionMode.POINT}
        return [(f"fusion={flag}", _update(base, {**point, "subnet.fusion": flag})) for flag in (True, False)]
    return [
        ("point", _update(base, {"mode": SupervisionMode.POINT, "data.label_proportions": {}})),
        ("hbox", _update(base, {"mode": SupervisionMode.HBOX, "data.label_proportions": {}})),
        (f"point {MIXED_POINT_SHARE:.0%} + hbox", _update(base, {
            "mode": SupervisionMode.MIXED,
            "data.label_proportions": {"point": MIXED_POINT_SHARE, "hbox": round(1 - MIXED_POINT_SHARE, 6)},
        })),
    ]


def _scale_columns(result: TrainResult) -> Dict[str, float]:
    """Mean m per area quartile of the held-out objects, and the largest-to-smallest ratio."""
    table = scale_by_size(result.model, result.test_set)
    table.to_csv(result.checkpoint_path.parent / "scale_by_size.csv", index=False)
    columns = {f"scale_q{int(q)}": float(m) for q, m in zip(table["quantile"], table["mean_scale"])}
    columns["scale_spread"] = scale_spread(table)
    return columns


def run_ablation(study: Union[AblationStudy, str], base: TrainConfig,
                 output_dir: Optional[Union[str, Path]] = None) -> pd.DataFrame:
    """Train every variant of `study` and tabulate final AP50.

    All variants share the seed, so they train on the same generated data.
    """
    study = AblationStudy(study)
    root = Path(output_dir or base.output_dir) / f"ablation_{study.value}"
    rows = []
    for idx, (name, cfg) in enumerate(study_variants(study, base)):
        logging.info(f"Ablation {study.value}: variant {idx + 1} '{name}'")
        result = train(cfg, output_dir=root / f"variant_{idx:02d}")
        row = {"study": study.value, "variant": name, "mode": cfg.mode.value,
               "ap50": result.final_ap50, "run_dir": str(result.checkpoint_path.parent)}
        if study is AblationStudy.FUSION and result.test_set is not None and len(result.test_set):
            row.update(_scale_columns(result))
        rows.append(row)
    table = pd.DataFrame(rows)
    root.mkdir(parents=True, exist_ok=True)
    table.to_csv(root / "results.csv", index=False)
    logging.info(f"Ablation {study.value} results:\n{table[['variant', 'ap50']].to_string(index=False)}")
    return table
