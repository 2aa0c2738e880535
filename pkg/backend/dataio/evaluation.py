"""Average precision of rotated detections.

Matching follows the VOC / DOTA convention: per class, detections of all
images are visited by descending score (input order breaks ties, images in
annotation order); each detection takes the ground truth it overlaps most.
It is a true positive if that IoU reaches the threshold and the ground truth
is still free, ignored if that ground truth is marked difficult, and a false
positive otherwise. AP is the area under the precision envelope at every
recall step (all-point interpolation).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Sequence

import numpy as np
import pandas as pd

from dataio.annotations import AnnotationSet, Detection
from geometry.boxes import as_rboxes
from geometry.overlaps import pairwise_rotated_iou
from utils.errors import DataError

COCO_THRESHOLDS = tuple(float(t) for t in np.round(np.arange(0.5, 0.951, 0.05), 2))


def average_precision(recall: np.ndarray, precision: np.ndarray) -> float:
    """Area under the monotone precision envelope."""
    mrec = np.concatenate(([0.0], recall, [1.0]))
    mpre = np.concatenate(([0.0], precision, [0.0]))
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    steps = np.where(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


@dataclass
class APReport:
    iou_thresh: float
    table: pd.DataFrame  # one row per class: num_gts, num_dets, tp, ap
    excluded: List[str] = field(default_factory=list)

    @property
    def mean_ap(self) -> float:
        scored = self.table.loc[~self.table.index.isin(self.excluded), "ap"]
        return float(scored.mean()) if len(scored) else 0.0

    def per_class(self) -> Dict[str, float]:
        return {name: float(v) for name, v in self.table["ap"].items() if name not in self.excluded}


def _class_tpfp(detections: Mapping[str, Sequence[Detection]], gts: AnnotationSet, category: int,
                iou_thresh: float):
    ordered = []
    gt_boxes, gt_difficult = {}, {}
    for img in gts:
        instances = [inst for inst in img.instances if inst.category == category]
        boxes = [inst.as_rbox() for inst in instances]
        if any(b is None for b in boxes):
            raise DataError(f"Image '{img.image_id}': evaluation needs box ground truth, found point labels")
        gt_boxes[img.image_id] = boxes
        gt_difficult[img.image_id] = np.array([inst.difficult for inst in instances], dtype=bool)
        ordered += [(img.image_id, det) for det in detections.get(img.image_id, []) if det.category == category]

    num_gts = int(sum((~d).sum() for d in gt_difficult.values()))
    scores = np.array([det.score for _, det in ordered], dtype=np.float64)
    order = np.argsort(-scores, kind="stable")
    tp = np.zeros(len(ordered))
    fp = np.zeros(len(ordered))
    covered = {image_id: np.zeros(len(boxes), dtype=bool) for image_id, boxes in gt_boxes.items()}

    for rank, idx in enumerate(order):
        image_id, det = ordered[idx]
        boxes = gt_boxes[image_id]
        if not boxes:
            fp[rank] = 1
            continue
        ious = pairwise_rotated_iou(as_rboxes([det.box]), as_rboxes(boxes))[0].numpy()
        best = int(np.argmax(ious))
        if ious[best] >= iou_thresh:
            if gt_difficult[image_id][best]:
                continue
            if not covered[image_id][best]:
                covered[image_id][best] = True
                tp[rank] = 1
            else:
                fp[rank] = 1
        else:
            fp[rank] = 1
    return tp, fp, num_gts, len(ordered)


def eval_ap(detections: Mapping[str, Sequence[Detection]], gts: AnnotationSet,
            iou_thresh: float = 0.5) -> APReport:
    """Per-class AP and its mean over classes that have ground truth.

    Args:
        detections: image id -> detections of that image.
        gts: box annotations (RBoxes, or HBoxes evaluated as theta = 0 boxes).
    """
    unknown = set(detections) - {img.image_id for img in gts}
    if unknown:
        logging.warning(f"Ignoring detections for {len(unknown)} images without annotations")
    rows, excluded = [], []
    for category, name in enumerate(gts.classes):
        tp, fp, num_gts, num_dets = _class_tpfp(detections, gts, category, iou_thresh)
        if num_gts == 0:
            excluded.append(name)
            rows.append({"class": name, "num_gts": 0, "num_dets": num_dets, "tp": int(tp.sum()), "ap": np.nan})
            continue
        tp_cum, fp_cum = np.cumsum(tp), np.cumsum(fp)
        recall = tp_cum / num_gts
        precision = tp_cum / np.maximum(tp_cum + fp_cum, np.finfo(np.float64).eps)
        rows.append({"class": name, "num_gts": num_gts, "num_dets": num_dets, "tp": int(tp.sum()),
                     "ap": average_precision(recall, precision)})
    if excluded:
        logging.info(f"Classes without ground truth excluded from the mean: {excluded}")
    table = pd.DataFrame(rows).set_index("class")
    return APReport(iou_thresh, table, excluded)


def eval_ap50(detections: Mapping[str, Sequence[Detection]], gts: AnnotationSet) -> APReport:
    return eval_ap(detections, gts, 0.5)


def eval_summary(detections: Mapping[str, Sequence[Detection]], gts: AnnotationSet) -> pd.DataFrame:
    """AP50, AP75 and AP50:95 (mean over thresholds 0.50, 0.55, ..., 0.95) per class and overall."""
    reports = {t: eval_ap(detections, gts, t) for t in COCO_THRESHOLDS}
    excluded = reports[0.5].excluded
    summary = pd.DataFrame({
        "AP50": reports[0.5].table["ap"],
        "AP75": reports[0.75].table["ap"],
        "AP50:95": pd.concat([r.table["ap"] for r in reports.values()], axis=1).mean(axis=1, skipna=False),
    })
    kept = summary.loc[~summary.index.isin(excluded)]
    summary.loc["mean"] = kept.mean(axis=0) if len(kept) else 0.0
    return summary
