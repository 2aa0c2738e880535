"""Label assignment: which feature locations learn which object.

Three strategies are provided:

* `assign_fcos` - centre sampling inside the rotated box with per-level
  regression ranges, used by the dense detector.
* `assign_points_nearest` - one location per object on the single stride-8
  map of the point subnet.
* `assign_score_based` - the best scoring locations within an L1 gate, used
  when the point subnet is trained as the detector itself.

Locations are indexed the way the heads flatten them: level, row, column.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import torch

from angle_coding.phase_coder import decode_predicted
from dataio.annotations import ImageAnnotations, LabelKind
from detector.dense_head import encode_ltrb
from losses.consistency import PairedAngles
from losses.supervised import centerness_target

FCOS_RANGES = ((0.0, 64.0), (64.0, 128.0), (128.0, 256.0), (256.0, 512.0), (512.0, math.inf))
FCOS_REFERENCE_SIZE = 1024
CENTER_RADIUS = 1.5
SCORE_GATE = 32.0
SCORE_TOPK = 4


@dataclass
class GroundTruth:
    """Objects of one image in tensor form.

    Point labels have NaN rows in `boxes`; `centers` is always defined.
    """
    centers: torch.Tensor  # (G, 2)
    boxes: torch.Tensor  # (G, 5)
    categories: torch.Tensor  # (G,)
    is_hbox: torch.Tensor  # (G,) bool
    synthetic: torch.Tensor  # (G,) bool

    def __len__(self) -> int:
        return int(self.categories.numel())

    @property
    def has_box(self) -> torch.Tensor:
        return ~torch.isnan(self.boxes).any(-1)

    @classmethod
    def from_annotations(cls, anns: ImageAnnotations) -> "GroundTruth":
        kinds = anns.kinds()
        count = len(kinds)
        return cls(
            centers=anns.centers,
            boxes=anns.rbox_tensor(),
            categories=anns.categories,
            is_hbox=torch.tensor([k is LabelKind.HBOX for k in kinds], dtype=torch.bool),
            synthetic=torch.zeros(count, dtype=torch.bool),
        )

    def with_boxes(self, boxes: torch.Tensor, mask: torch.Tensor) -> "GroundTruth":
        """Replace rows selected by `mask` with exact RBoxes (e.g. point suggestions)."""
        updated = self.boxes.clone()
        updated[mask] = boxes[mask].to(updated)
        return GroundTruth(self.centers, updated, self.categories, self.is_hbox & ~mask, self.synthetic.clone())

    def extend(self, boxes: torch.Tensor, categories: torch.Tensor, synthetic: bool = True) -> "GroundTruth":
        """Append RBox objects, by default flagged as synthetic patterns."""
        boxes = boxes.to(self.boxes).reshape(-1, 5)
        extra = boxes.shape[0]
        return GroundTruth(
            torch.cat([self.centers, boxes[:, :2]]),
            torch.cat([self.boxes, boxes]),
            torch.cat([self.categories, categories.to(self.categories).reshape(-1)]),
            torch.cat([self.is_hbox, torch.zeros(extra, dtype=torch.bool)]),
            torch.cat([self.synthetic, torch.full((extra,), synthetic, dtype=torch.bool)]),
        )


@dataclass
class AssignmentResult:
    """Per-location targets.

    `labels` holds a class index for positives, `num_classes` for background
    and -1 for ignored locations. `box_mask` marks positives whose object has
    a box; `synth_mask` is the subset assigned to synthetic patterns.
    """
    labels: torch.Tensor  # (L,)
    gt_index: torch.Tensor  # (L,) -1 where no object
    box_targets: torch.Tensor  # (L, 5)
    centerness: torch.Tensor  # (L,)
    is_hbox: torch.Tensor  # (L,) bool
    box_mask: torch.Tensor  # (L,) bool
    synth_mask: torch.Tensor  # (L,) bool
    num_objects: int
    unassigned: List[int]

    @property
    def positives(self) -> torch.Tensor:
        return self.gt_index >= 0

    @property
    def num_positives(self) -> int:
        return int(self.positives.sum())

    def locations_of(self, gt: int) -> torch.Tensor:
        return torch.nonzero(self.gt_index == gt).reshape(-1)

    def assigned_objects(self) -> torch.Tensor:
        return torch.unique(self.gt_index[self.positives])


def _build_result(gt: GroundTruth, gt_index: torch.Tensor, num_classes: int,
                  centerness: Optional[torch.Tensor] = None) -> AssignmentResult:
    num_locations = gt_index.numel()
    pos = gt_index >= 0
    idx = gt_index.clamp(min=0)

    labels = torch.full((num_locations,), num_classes, dtype=torch.long)
    box_targets = torch.full((num_locations, 5), math.nan, dtype=gt.boxes.dtype)
    is_hbox = torch.zeros(num_locations, dtype=torch.bool)
    box_mask = torch.zeros(num_locations, dtype=torch.bool)
    synth_mask = torch.zeros(num_locations, dtype=torch.bool)
    if len(gt):
        labels[pos] = gt.categories[idx[pos]]
        box_targets[pos] = gt.boxes[idx[pos]]
        is_hbox[pos] = gt.is_hbox[idx[pos]]
        box_mask[pos] = gt.has_box[idx[pos]]
        synth_mask[pos] = gt.synthetic[idx[pos]]
    if centerness is None:
        centerness = pos.to(gt.boxes.dtype)

    assigned = set(gt_index[pos].tolist())
    unassigned = [g for g in range(len(gt)) if g not in assigned]
    if unassigned:
        logging.warning(f"{len(unassigned)} of {len(gt)} objects received no location: {unassigned}")
    return AssignmentResult(labels, gt_index, box_targets, centerness, is_hbox, box_mask, synth_mask,
                            len(gt), unassigned)


def regress_ranges(image_size: int) -> Tuple[Tuple[float, float], ...]:
    """Standard FCOS level ranges scaled from a 1024 px reference canvas."""
    ratio = image_size / FCOS_REFERENCE_SIZE
    return tuple((low * ratio, high * ratio) for low, high in FCOS_RANGES)


def assign_fcos(gt: GroundTruth, points: torch.Tensor, strides: torch.Tensor, levels: torch.Tensor,
                num_classes: int, image_size: int, radius: float = CENTER_RADIUS,
                fallback: bool = True) -> AssignmentResult:
    """Centre-sampling assignment over all pyramid levels.

    A location is a candidate for an object if it lies inside the box, within
    `radius` strides of the centre along both box axes, and its largest
    distance to a side falls in its level's range. A location claimed by
    several objects goes to the smallest one (lower index on equal area).

    Objects without a box (points) are placed at the nearest stride-8
    location for classification only. With `fallback`, a boxed object with no
    candidate is treated the same way, provided that location is still free.
    """
    points = points.to(torch.float64)
    strides = strides.to(torch.float64)
    num_locations = points.shape[0]
    gt_index = torch.full((num_locations,), -1, dtype=torch.long)
    centerness = torch.zeros(num_locations, dtype=torch.float64)
    if len(gt) == 0:
        return _build_result(gt, gt_index, num_classes, centerness)

    has_box = gt.has_box
    boxes = gt.boxes.to(torch.float64)
    boxed = torch.nonzero(has_box).reshape(-1)

    if boxed.numel():
        sub = boxes[boxed]
        # (L, G, 4) distances from every location to every box side, in the box frame
        ltrb = encode_ltrb(points[:, None, :], sub[None, :, :])
        half_w, half_h = sub[:, 2] / 2, sub[:, 3] / 2
        local_x, local_y = ltrb[..., 0] - half_w, ltrb[..., 1] - half_h
        inside = ltrb.min(-1).values > 0
        near = (local_x.abs() < radius * strides[:, None]) & (local_y.abs() < radius * strides[:, None])
        ranges = torch.tensor(regress_ranges(image_size), dtype=torch.float64)[levels]
        reach = ltrb.max(-1).values
        in_range = (reach > ranges[:, :1]) & (reach <= ranges[:, 1:])

        candidate = inside & near & in_range
        area = (sub[:, 2] * sub[:, 3])[None, :].expand(num_locations, -1)
        area = torch.where(candidate, area, torch.full_like(area, math.inf))
        best_area, best = area.min(-1)
        hit = torch.isfinite(best_area)
        gt_index[hit] = boxed[best[hit]]
        rows = torch.arange(num_locations)
        centerness[hit] = centerness_target(ltrb[rows[hit], best[hit]])

    nearest_level = levels == 0
    p3_index = torch.nonzero(nearest_level).reshape(-1)
    for g in range(len(gt)):
        if has_box[g] and (not fallback or bool((gt_index == g).any())):
            continue
        dist = ((points[p3_index] - gt.centers[g].to(torch.float64)) ** 2).sum(-1)
        loc = int(p3_index[torch.argmin(dist)])
        if gt_index[loc] >= 0:
            continue
        gt_index[loc] = g
        if has_box[g]:
            centerness[loc] = float(centerness_target(encode_ltrb(points[loc], boxes[g])))
        else:
            centerness[loc] = 1.0
    return _build_result(gt, gt_index, num_classes, centerness)


def assign_points_nearest(gt: GroundTruth, points: torch.Tensor, num_classes: int) -> AssignmentResult:
    """Each object takes its nearest free location on a single-level map.

    Objects are processed in index order. On equal distance the lower
    location index wins; an object whose nearest location is already taken
    moves to the next nearest free one.
    """
    points = points.to(torch.float64)
    gt_index = torch.full((points.shape[0],), -1, dtype=torch.long)
    for g in range(len(gt)):
        dist = ((points - gt.centers[g].to(torch.float64)) ** 2).sum(-1)
        for loc in torch.argsort(dist, stable=True).tolist():
            if gt_index[loc] < 0:
                gt_index[loc] = g
                break
    return _build_result(gt, gt_index, num_classes)


def assign_score_based(gt: GroundTruth, anchors: torch.Tensor, cls_scores: torch.Tensor,
                       gate: float = SCORE_GATE, topk: int = SCORE_TOPK) -> AssignmentResult:
    """Top-k locations by class score among those within an L1 gate of the object.

    Locations farther than `gate` (L1 distance between centres) score 0 and
    are never chosen; a location inside the gate is eligible whatever its
    score. A location wanted by two objects goes to the higher score.

    Args:
        anchors: (L, 2) location centres.
        cls_scores: (L, K) class probabilities.
    """
    anchors = anchors.to(torch.float64)
    scores = cls_scores.detach().to(torch.float64)
    num_classes = scores.shape[-1]
    gt_index = torch.full((anchors.shape[0],), -1, dtype=torch.long)
    owner_score = torch.full((anchors.shape[0],), -math.inf, dtype=torch.float64)
    for g in range(len(gt)):
        l1 = (anchors - gt.centers[g].to(torch.float64)).abs().sum(-1)
        within = l1 <= gate
        if not within.any():
            continue
        score = torch.where(within, scores[:, int(gt.categories[g])], torch.zeros_like(l1))
        eligible = torch.nonzero(within).reshape(-1)
        order = torch.argsort(-score[eligible], stable=True)
        for loc in eligible[order[:topk]].tolist():
            if score[loc] > owner_score[loc]:
                gt_index[loc] = g
                owner_score[loc] = score[loc]
    return _build_result(gt, gt_index, num_classes)


def _object_mean(values: torch.Tensor, result: AssignmentResult, objects: torch.Tensor) -> torch.Tensor:
    """(M, D) mean of per-location `values` (L, D) over each object's locations."""
    if objects.numel() == 0:
        return values.new_zeros((0, values.shape[-1]))
    member = (result.gt_index[None, :] == objects[:, None]).to(values)
    return member @ values / member.sum(-1, keepdim=True)


def paired_objects(a_ori: AssignmentResult, a_view: AssignmentResult, keep: Sequence[bool],
                   excluded: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Indices of objects present in both views and kept by the view's keep-mask.

    Args:
        excluded: optional (G,) bool mask of objects left out (e.g. rotation-agnostic classes).
    """
    keep = torch.as_tensor(keep, dtype=torch.bool).reshape(-1)
    present = torch.zeros(a_ori.num_objects, dtype=torch.bool)
    present[a_ori.assigned_objects()] = True
    in_view = torch.zeros(a_ori.num_objects, dtype=torch.bool)
    in_view[a_view.assigned_objects()] = True
    both = present & in_view & keep[:a_ori.num_objects]
    if excluded is not None:
        both &= ~excluded.reshape(-1)
    return torch.nonzero(both).reshape(-1)


def pair_views(a_ori: AssignmentResult, code_ori: torch.Tensor, a_view: AssignmentResult,
               code_view: torch.Tensor, keep: Sequence[bool],
               excluded: Optional[torch.Tensor] = None) -> Tuple[PairedAngles, torch.Tensor]:
    """Per-object angles in the original and the transformed view.

    Angle codes are averaged over each object's locations and then decoded,
    so objects are matched by index and never spatially.

    Args:
        code_ori, code_view: (L, N_ENC) predicted codes of the two views.
        keep: (G,) keep-mask of the view.

    Returns:
        The paired angles and the object indices they belong to.
    """
    objects = paired_objects(a_ori, a_view, keep, excluded)
    theta = decode_predicted(_object_mean(code_ori, a_ori, objects))
    theta_view = decode_predicted(_object_mean(code_view, a_view, objects))
    return PairedAngles(theta, theta_view), objects


def object_boxes(result: AssignmentResult, boxes: torch.Tensor, code: torch.Tensor,
                 objects: torch.Tensor) -> torch.Tensor:
    """(M, 5) per-object mean of predicted boxes; the angle comes from the mean code."""
    geometry = _object_mean(boxes[:, :4], result, objects)
    theta = decode_predicted(_object_mean(code, result, objects))
    return torch.cat([geometry, theta[:, None]], -1)
