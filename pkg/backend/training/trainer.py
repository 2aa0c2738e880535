"""The training loop: schedules, point suggestions, evaluation and run artifacts."""

from __future__ import annotations

import json
import logging
import math
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np
import pandas as pd
import torch

from dataio.annotations import LabelKind
from detector.assigners import GroundTruth, assign_points_nearest
from detector.checkpoint import Checkpoint, save_checkpoint
from detector.model import WeakRBoxDetector, build_model
from geometry.boxes import normalize_rboxes
from initialize_app.config import TrainConfig, dump_config
from initialize_app.runtime import create_run_dir, prepare_runtime
from synthesis.patterns import make_basic_patterns
from training.data import SampleSet, build_datasets, iterate_batches, to_batch
from training.inference import evaluate
from training.step import TrainState, train_step

CHECKPOINT_NAME = "model.wrbx"
METRICS_NAME = "metrics.jsonl"
CONFIG_NAME = "config.toml"


@dataclass
class TrainResult:
    checkpoint_path: Path
    metrics_path: Path
    config_path: Path
    history: pd.DataFrame  # one row per epoch
    final_ap50: Optional[float]
    model: WeakRBoxDetector
    test_set: Optional[SampleSet] = None


def lr_factor(cfg: TrainConfig, iters_per_epoch: int) -> Callable[[int], float]:
    """Linear warm-up from `warmup_ratio`, then constant, then one decay."""
    warmup = cfg.optim.warmup_iters
    ratio = cfg.optim.warmup_ratio
    decay_at = cfg.decay_epoch * iters_per_epoch

    def factor(iteration: int) -> float:
        scale = cfg.optim.decay_gamma if iteration >= decay_at else 1.0
        if warmup and iteration < warmup:
            return scale * (ratio + (1.0 - ratio) * iteration / warmup)
        return scale

    return factor


def build_state(cfg: TrainConfig, model: WeakRBoxDetector, rng: np.random.Generator,
                iters_per_epoch: int, dump_dir: Optional[Path] = None) -> TrainState:
    optimizer = torch.optim.AdamW(model.parameters(), lr=cfg.optim.lr, weight_decay=cfg.optim.weight_decay)
    scheduler = torch.optim.lr_scheduler.LambdaLR(optimizer, lr_factor(cfg, iters_per_epoch))
    patterns = make_basic_patterns(cfg.data.scene) if cfg.uses_points else {}
    return TrainState(model, optimizer, scheduler, rng, patterns=patterns, dump_dir=dump_dir)


@torch.no_grad()
def refresh_suggestions(model: WeakRBoxDetector, samples: SampleSet, batch_size: int = 8) -> Dict[str, torch.Tensor]:
    """RBox suggestions for point-labelled objects from the current point subnet.

    Each point takes the box predicted at its nearest location, centred on
    the labelled point. Rows of other objects are NaN.
    """
    if model.point_subnet is None:
        return {}
    was_training = model.training
    model.eval()
    suggestions: Dict[str, torch.Tensor] = {}
    num_classes = model.config.num_classes
    for start in range(0, len(samples), batch_size):
        chunk = samples.samples[start:start + batch_size]
        pred = model.point_subnet(to_batch([s.image for s in chunk]))
        for b, sample in enumerate(chunk):
            anns = sample.annotations
            rows = torch.full((len(anns), 5), math.nan, dtype=torch.float64)
            is_point = [kind is LabelKind.POINT for kind in anns.kinds()]
            if any(is_point):
                result = assign_points_nearest(GroundTruth.from_annotations(anns), pred.points, num_classes)
                for g, point in enumerate(is_point):
                    locations = result.locations_of(g)
                    if not point or locations.numel() == 0:
                        continue
                    box = pred.boxes[b][int(locations[0])].to(torch.float64).clone()
                    box[:2] = anns.centers[g]
                    rows[g] = box
                rows = normalize_rboxes(rows)
            suggestions[sample.image_id] = rows
    model.train(was_training)
    count = sum(int((~torch.isnan(r).any(-1)).sum()) for r in suggestions.values())
    logging.info(f"Refreshed {count} point suggestions")
    return suggestions


def _epoch_record(epoch: int, state: TrainState, parts: Dict[str, List[float]], skipped: int,
                  ap50: Optional[float]) -> Dict:
    return {
        "epoch": epoch,
        "iteration": state.iteration,
        "lr": state.lr,
        "skipped": skipped,
        "loss": {name: float(np.mean(values)) for name, values in sorted(parts.items())},
        "ap50": ap50,
    }


def train(cfg: TrainConfig, train_set: Optional[SampleSet] = None, test_set: Optional[SampleSet] = None,
          output_dir: Optional[Path] = None) -> TrainResult:
    """Train a detector from `cfg`; datasets are built from the config unless given.

    Writes the checkpoint, a line-delimited JSON metrics log (one record per
    epoch) and the resolved config into the run directory.

    Raises:
        NumericalError: a step produced a non-finite loss.
    """
    rng = prepare_runtime(cfg.seed, cfg.threads)
    run_dir = create_run_dir(output_dir or cfg.output_dir)
    if train_set is None:
        train_set, built_test = build_datasets(cfg, rng)
        test_set = test_set if test_set is not None else built_test

    model_cfg = cfg.detector_config(train_set.classes, train_set.image_size)
    model = build_model(model_cfg, seed=cfg.seed)
    iters_per_epoch = math.ceil(len(train_set) / cfg.batch_size)
    state = build_state(cfg, model, rng, iters_per_epoch, dump_dir=run_dir / "diagnostics")

    metrics_path = run_dir / METRICS_NAME
    metrics_path.write_text("")
    records = []
    ap50: Optional[float] = None
    for epoch in range(cfg.epochs):
        state.epoch = epoch
        if cfg.uses_points and not cfg.end_to_end and epoch >= cfg.subnet.suggestion_start_epoch:
            state.suggestions = refresh_suggestions(model, train_set, cfg.batch_size)

        parts: Dict[str, List[float]] = defaultdict(list)
        skipped = 0
        for indices in iterate_batches(len(train_set), cfg.batch_size, state.rng):
            record, state = train_step([train_set[i] for i in indices], state, cfg)
            if record is None:
                skipped += 1
                continue
            for name, value in record.items():
                parts[name].append(value)

        due = epoch == cfg.epochs - 1 or (cfg.eval_every and (epoch + 1) % cfg.eval_every == 0)
        ap50 = None
        if due and test_set is not None and len(test_set):
            ap50 = evaluate(model, test_set, cfg.score_thresh, cfg.nms_thresh).mean_ap

        record = _epoch_record(epoch, state, parts, skipped, ap50)
        records.append(record)
        with open(metrics_path, "a") as f:
            f.write(json.dumps(record, sort_keys=True) + "\n")
        total = record["loss"].get("total", float("nan"))
        logging.info(f"Epoch {epoch + 1}/{cfg.epochs}: loss {total:.4f}, lr {state.lr:.2e}, "
                     f"skipped {skipped}, AP50 {ap50 if ap50 is not None else '-'}")

    meta = {"mode": cfg.mode.value, "seed": cfg.seed, "epochs": cfg.epochs, "iterations": state.iteration,
            "ap50": ap50}
    checkpoint_path = save_checkpoint(run_dir / CHECKPOINT_NAME, Checkpoint.from_model(model, meta))
    config_path = dump_config(cfg, run_dir / CONFIG_NAME)
    logging.info(f"Checkpoint written to {checkpoint_path}")

    history = pd.json_normalize(records)
    return TrainResult(checkpoint_path, metrics_path, config_path, history, ap50, model, test_set)
