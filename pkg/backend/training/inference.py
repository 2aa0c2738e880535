"""Detection with a trained model: forward pass, score filter and rotated NMS only."""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Dict, List, Sequence, Union

import numpy as np
import pandas as pd
import torch

from dataio.annotations import Detection
from dataio.evaluation import APReport, eval_ap
from detector.assigners import GroundTruth, assign_points_nearest
from detector.checkpoint import Checkpoint, load_checkpoint
from detector.model import WeakRBoxDetector
from training.data import SampleSet, to_batch
from utils.errors import ConfigError, DataError

DEFAULT_SCORE_THRESH = 0.05
DEFAULT_NMS_THRESH = 0.1

ModelSource = Union[WeakRBoxDetector, Checkpoint, str, Path]


def resolve_model(source: ModelSource) -> WeakRBoxDetector:
    if isinstance(source, WeakRBoxDetector):
        return source
    checkpoint = source if isinstance(source, Checkpoint) else load_checkpoint(source)
    return checkpoint.build_model()


def detect_images(model: WeakRBoxDetector, images: Sequence[np.ndarray], score_thresh: float = DEFAULT_SCORE_THRESH,
                  nms_thresh: float = DEFAULT_NMS_THRESH, batch_size: int = 8) -> List[List[Detection]]:
    was_training = model.training
    model.eval()
    detections: List[List[Detection]] = []
    with torch.no_grad():
        for start in range(0, len(images), batch_size):
            chunk = images[start:start + batch_size]
            detections += model.detect(to_batch(chunk), score_thresh, nms_thresh)
    model.train(was_training)
    return detections


def infer(image: np.ndarray, checkpoint: ModelSource, score_thresh: float = DEFAULT_SCORE_THRESH,
          nms_thresh: float = DEFAULT_NMS_THRESH) -> List[Detection]:
    """Detections (RBox, class, score) of one (H, W, 3) image, best first."""
    model = resolve_model(checkpoint)
    return detect_images(model, [image], score_thresh, nms_thresh)[0]


def predict_samples(model: WeakRBoxDetector, samples: SampleSet, score_thresh: float = DEFAULT_SCORE_THRESH,
                    nms_thresh: float = DEFAULT_NMS_THRESH) -> Dict[str, List[Detection]]:
    detections = detect_images(model, [s.image for s in samples.samples], score_thresh, nms_thresh)
    return {s.image_id: dets for s, dets in zip(samples.samples, detections)}


def evaluate(model: WeakRBoxDetector, samples: SampleSet, score_thresh: float = DEFAULT_SCORE_THRESH,
             nms_thresh: float = DEFAULT_NMS_THRESH, iou_thresh: float = 0.5) -> APReport:
    detections = predict_samples(model, samples, score_thresh, nms_thresh)
    report = eval_ap(detections, samples.annotation_set(), iou_thresh)
    logging.info(f"AP@{iou_thresh:.2f} = {report.mean_ap:.4f} on {len(samples)} images")
    return report


def scale_by_size(model: WeakRBoxDetector, samples: SampleSet, quantiles: int = 4,
                  batch_size: int = 8) -> pd.DataFrame:
    """Learned box scale m of the point subnet, grouped by object-area quantile.

    Each boxed object is read at the location the point assigner gives it
    during training. Quantile 1 holds the smallest objects.

    Returns:
        One row per quantile: `quantile`, `objects`, `mean_area`, `mean_scale`.
    """
    if model.point_subnet is None:
        raise ConfigError("Scale analysis needs a model with a point subnet")
    areas: List[float] = []
    scales: List[float] = []
    was_training = model.training
    model.eval()
    with torch.no_grad():
        for start in range(0, len(samples), batch_size):
            chunk = samples.samples[start:start + batch_size]
            pred = model.forward_points(to_batch([s.image for s in chunk]))
            for b, sample in enumerate(chunk):
                gt = GroundTruth.from_annotations(sample.annotations)
                if not len(gt):
                    continue
                assigned = assign_points_nearest(gt, pred.points, model.config.num_classes)
                for loc in torch.nonzero(assigned.gt_index >= 0).flatten().tolist():
                    g = int(assigned.gt_index[loc])
                    if bool(gt.has_box[g]):
                        areas.append(float(gt.boxes[g, 2] * gt.boxes[g, 3]))
                        scales.append(float(pred.scale[b, loc]))
    model.train(was_training)
    if len(areas) < quantiles:
        raise DataError(f"Scale analysis needs at least {quantiles} boxed objects, found {len(areas)}")

    frame = pd.DataFrame({"area": areas, "scale": scales})
    frame["quantile"] = pd.qcut(frame["area"], quantiles, labels=False, duplicates="drop") + 1
    table = frame.groupby("quantile").agg(objects=("area", "size"), mean_area=("area", "mean"),
                                          mean_scale=("scale", "mean")).reset_index()
    logging.info(f"Point subnet scale by object area:\n{table.to_string(index=False)}")
    return table


def scale_spread(table: pd.DataFrame) -> float:
    """Ratio of the largest to the smallest mean scale in a `scale_by_size` table."""
    return float(table["mean_scale"].max() / table["mean_scale"].min())
