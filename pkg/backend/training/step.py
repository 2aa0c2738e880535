"""One optimisation step of the weakly-supervised detector.

A step samples a single view for the whole batch, runs the original and the
transformed images through the shared network in one forward pass, assigns
locations in both, and combines

* the weakly-supervised branch on the original view: focal classification,
  centerness, and box losses (CircumIoU for HBoxes with the angle detached,
  rotated IoU for RBoxes, synthetic patterns and point suggestions);
* the self-supervised branch across views: rotation, flip or scale
  consistency of the per-object angles and boxes.

With point labels, synthetic patterns are pasted at labelled points before
the view is generated, and the point subnet is trained alongside on the
original images (classification everywhere, boxes on patterns only).
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch

from dataio.annotations import ImageAnnotations, Instance, LabelKind
from detector.assigners import (
    AssignmentResult,
    GroundTruth,
    assign_fcos,
    assign_points_nearest,
    assign_score_based,
    object_boxes,
    pair_views,
)
from detector.checkpoint import Checkpoint, save_checkpoint
from detector.dense_head import decode_ltrb
from detector.model import WeakRBoxDetector
from initialize_app.config import TrainConfig
from losses.composition import LossMode, total_loss
from losses.consistency import LossTerm, PairedAngles, loss_flp, loss_rot, loss_sca
from losses.supervised import loss_box_ws, loss_cls, loss_cn
from synthesis.patterns import BasicPattern, overlay_patterns
from training.data import Sample, random_quarter_turn, to_batch
from utils.errors import NumericalError
from views.transforms import ViewKind, ViewTransform, apply_view, sample_view

MIN_BOX_WEIGHT = 0.05


@dataclass
class TrainState:
    model: WeakRBoxDetector
    optimizer: torch.optim.Optimizer
    scheduler: torch.optim.lr_scheduler.LRScheduler
    rng: np.random.Generator
    patterns: Dict[int, BasicPattern] = field(default_factory=dict)
    suggestions: Dict[str, torch.Tensor] = field(default_factory=dict)  # image id -> (G, 5), NaN rows where none
    iteration: int = 0
    epoch: int = 0
    dump_dir: Optional[Path] = None

    @property
    def lr(self) -> float:
        return float(self.optimizer.param_groups[0]["lr"])


@dataclass
class StepInput:
    """One sample prepared for a step: both views and their ground truth."""
    image: np.ndarray
    view_image: np.ndarray
    gt: GroundTruth
    gt_view: GroundTruth
    keep: np.ndarray
    image_id: str


def ground_truth(annotations: ImageAnnotations, num_labelled: int,
                 suggestions: Optional[torch.Tensor] = None) -> GroundTruth:
    """Objects of one image; rows past `num_labelled` are synthetic patterns.

    Point rows with a usable suggestion are replaced by the suggested RBox.
    """
    gt = GroundTruth.from_annotations(annotations)
    gt = replace(gt, synthetic=torch.arange(len(gt)) >= num_labelled)
    if suggestions is None or num_labelled == 0:
        return gt
    padded = torch.full((len(gt), 5), math.nan, dtype=gt.boxes.dtype)
    padded[:num_labelled] = suggestions.to(gt.boxes)[:num_labelled]
    usable = ~torch.isnan(padded).any(-1) & ~gt.has_box
    return gt.with_boxes(padded, usable) if bool(usable.any()) else gt


def prepare_sample(sample: Sample, view: ViewTransform, cfg: TrainConfig, state: TrainState) -> StepInput:
    suggestion = state.suggestions.get(sample.image_id)
    if cfg.data.random_rotate:
        sample, turn = random_quarter_turn(sample, state.rng, cfg.views.padding)
        if turn is not None and suggestion is not None:
            suggestion = turn.map_rboxes(suggestion, sample.annotations.width, sample.annotations.height)

    anns = sample.annotations
    image, synthetic = sample.image, []
    if cfg.uses_points:
        points = [inst for inst in anns.instances if inst.kind is LabelKind.POINT]
        image, synthetic = overlay_patterns(image, points, state.patterns, state.rng)
    combined = ImageAnnotations(anns.image_id, anns.width, anns.height,
                                list(anns.instances) + [Instance(s.box, s.category) for s in synthetic])
    view_image, view_anns, keep = apply_view(image, combined, view, cfg.views.padding)
    view_suggestion = None
    if suggestion is not None:
        view_suggestion = view.map_rboxes(suggestion, anns.width, anns.height)
    return StepInput(
        image=image,
        view_image=view_image,
        gt=ground_truth(combined, len(anns), suggestion),
        gt_view=ground_truth(view_anns, len(anns), view_suggestion),
        keep=keep,
        image_id=anns.image_id,
    )


def _consistency_parts(view: ViewTransform, pairs: PairedAngles, box_pairs: Tuple[torch.Tensor, torch.Tensor],
                       snap: bool, like: torch.Tensor) -> Dict[str, LossTerm]:
    zero = LossTerm.zero(like)
    parts = {"rot": zero, "flp": zero, "sca": zero}
    if view.kind is ViewKind.ROTATE:
        parts["rot"] = loss_rot(pairs, view.angle, snap=snap)
    elif view.kind is ViewKind.FLIP:
        parts["flp"] = loss_flp(pairs, snap=snap)
    else:
        parts["sca"] = loss_sca(box_pairs[0], box_pairs[1], view.scale)
    return parts


def _cat_pairs(pairs: List[PairedAngles], like: torch.Tensor) -> PairedAngles:
    if not pairs:
        return PairedAngles.empty(like.dtype)
    return PairedAngles(torch.cat([p.theta for p in pairs]), torch.cat([p.theta_view for p in pairs]))


def _box_rows(model: WeakRBoxDetector, result: AssignmentResult, rows: torch.Tensor,
              boxes: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
    """Predicted and target boxes at `rows`; rotation-agnostic classes compare at angle 0."""
    targets = result.box_targets[rows].clone()
    agnostic = model.is_agnostic(result.labels[rows])
    if bool(agnostic.any()):
        theta = torch.where(agnostic, torch.zeros_like(boxes[:, 4]), boxes[:, 4])
        boxes = torch.cat([boxes[:, :4], theta[:, None]], -1)
        targets[agnostic, 4] = 0.0
    return boxes, targets


def dense_losses(model: WeakRBoxDetector, inputs: Sequence[StepInput], view: ViewTransform,
                 cfg: TrainConfig, images: torch.Tensor) -> Tuple[Dict[str, object], int]:
    """Loss parts of the dense detector for a batch; returns the parts and the positive count."""
    batch = len(inputs)
    pred = model(images)
    num_classes = model.config.num_classes
    image_size = images.shape[-1]

    logits, labels = [], []
    box_pred, box_gt, box_hbox, box_weight = [], [], [], []
    cn_pred, cn_gt = [], []
    pairs: List[PairedAngles] = []
    num_pos = 0
    all_angles = pred.angles
    for b, item in enumerate(inputs):
        a_ori = assign_fcos(item.gt, pred.points, pred.strides, pred.levels, num_classes, image_size)
        a_view = assign_fcos(item.gt_view, pred.points, pred.strides, pred.levels, num_classes, image_size)
        num_pos += a_ori.num_positives
        logits.append(pred.cls_logits[b])
        labels.append(a_ori.labels)

        rows = torch.nonzero(a_ori.positives & a_ori.box_mask).reshape(-1)
        if rows.numel():
            angles = all_angles[b][rows]
            is_hbox = a_ori.is_hbox[rows]
            # HBox rows: the angle is learned by the consistency branch only
            angles = torch.where(is_hbox, angles.detach(), angles)
            boxes = decode_ltrb(pred.points[rows], pred.ltrb[b][rows], angles)
            boxes, targets = _box_rows(model, a_ori, rows, boxes)
            box_pred.append(boxes)
            box_gt.append(targets)
            box_hbox.append(is_hbox)
            box_weight.append(a_ori.centerness[rows].clamp(min=MIN_BOX_WEIGHT))
            cn_pred.append(pred.centerness[b][rows])
            cn_gt.append(a_ori.centerness[rows])

        excluded = model.is_agnostic(item.gt.categories)
        paired, _ = pair_views(a_ori, pred.angle_code[b], a_view, pred.angle_code[batch + b], item.keep, excluded)
        pairs.append(paired)

    like = pred.cls_logits
    parts: Dict[str, object] = {"cls": loss_cls(torch.cat(logits), torch.cat(labels))}
    if box_pred:
        parts["box"] = loss_box_ws(torch.cat(box_pred), torch.cat(box_gt), torch.cat(box_hbox),
                                   weights=torch.cat(box_weight).to(like))
        parts["cn"] = loss_cn(torch.cat(cn_pred), torch.cat(cn_gt))
    else:
        parts["box"] = like.sum() * 0.0
        parts["cn"] = like.sum() * 0.0
    empty_boxes = (like.new_zeros((0, 5)), like.new_zeros((0, 5)))
    parts.update(_consistency_parts(view, _cat_pairs(pairs, like), empty_boxes, cfg.views.snap, like))
    return parts, num_pos


def subnet_losses(model: WeakRBoxDetector, inputs: Sequence[StepInput], images: torch.Tensor) -> Dict[str, object]:
    """Point subnet on the original images: nearest-location assignment, boxes from patterns only."""
    pred = model.point_subnet(images)
    num_classes = model.config.num_classes
    logits, labels, box_pred, box_gt = [], [], [], []
    for b, item in enumerate(inputs):
        result = assign_points_nearest(item.gt, pred.points, num_classes)
        logits.append(pred.cls_logits[b])
        labels.append(result.labels)
        rows = torch.nonzero(result.positives & result.synth_mask).reshape(-1)
        if rows.numel():
            boxes, targets = _box_rows(model, result, rows, pred.boxes[b][rows])
            box_pred.append(boxes)
            box_gt.append(targets)
    like = pred.cls_logits
    parts: Dict[str, object] = {"cls": loss_cls(torch.cat(logits), torch.cat(labels))}
    if box_pred:
        parts["box"] = loss_box_ws(torch.cat(box_pred), torch.cat(box_gt), LabelKind.RBOX)
    else:
        parts["box"] = like.sum() * 0.0
    return parts


def end_to_end_losses(model: WeakRBoxDetector, inputs: Sequence[StepInput], view: ViewTransform,
                      cfg: TrainConfig, images: torch.Tensor) -> Tuple[Dict[str, object], int]:
    """The point subnet trained as the detector: score-based assignment in both views."""
    batch = len(inputs)
    pred = model.point_subnet(images)
    scores = torch.sigmoid(pred.cls_logits.detach())
    logits, labels, box_pred, box_gt = [], [], [], []
    pairs: List[PairedAngles] = []
    box_ori, box_view = [], []
    num_pos = 0
    for b, item in enumerate(inputs):
        a_ori = assign_score_based(item.gt, pred.points, scores[b], cfg.subnet.score_gate, cfg.subnet.score_topk)
        a_view = assign_score_based(item.gt_view, pred.points, scores[batch + b],
                                    cfg.subnet.score_gate, cfg.subnet.score_topk)
        num_pos += a_ori.num_positives
        logits.append(pred.cls_logits[b])
        labels.append(a_ori.labels)
        rows = torch.nonzero(a_ori.positives & a_ori.box_mask).reshape(-1)
        if rows.numel():
            boxes, targets = _box_rows(model, a_ori, rows, pred.boxes[b][rows])
            box_pred.append(boxes)
            box_gt.append(targets)

        excluded = model.is_agnostic(item.gt.categories)
        paired, objects = pair_views(a_ori, pred.angle_code[b], a_view, pred.angle_code[batch + b],
                                     item.keep, excluded)
        pairs.append(paired)
        if view.kind is ViewKind.SCALE:
            box_ori.append(object_boxes(a_ori, pred.boxes[b], pred.angle_code[b], objects))
            box_view.append(object_boxes(a_view, pred.boxes[batch + b], pred.angle_code[batch + b], objects))

    like = pred.cls_logits
    parts: Dict[str, object] = {"cls": loss_cls(torch.cat(logits), torch.cat(labels))}
    parts["box"] = (loss_box_ws(torch.cat(box_pred), torch.cat(box_gt), LabelKind.RBOX)
                    if box_pred else like.sum() * 0.0)
    box_pairs = ((torch.cat(box_ori), torch.cat(box_view)) if box_ori
                 else (like.new_zeros((0, 5)), like.new_zeros((0, 5))))
    parts.update(_consistency_parts(view, _cat_pairs(pairs, like), box_pairs, cfg.views.snap, like))
    return parts, num_pos


def _as_float(part) -> float:
    value = part.value if isinstance(part, LossTerm) else part
    return float(value.detach()) if isinstance(value, torch.Tensor) else float(value)


def dump_diagnostics(state: TrainState, parts: Dict[str, object], image_ids: Sequence[str]) -> Optional[Path]:
    """Write the failing step's loss parts and the current parameters for post-mortem inspection."""
    if state.dump_dir is None:
        return None
    dump_dir = Path(state.dump_dir)
    dump_dir.mkdir(parents=True, exist_ok=True)
    report = {
        "iteration": state.iteration,
        "epoch": state.epoch,
        "lr": state.lr,
        "images": list(image_ids),
        "parts": {name: _as_float(part) for name, part in parts.items()},
    }
    path = dump_dir / f"nonfinite_step_{state.iteration:06d}.json"
    path.write_text(json.dumps(report, indent=1))
    save_checkpoint(dump_dir / f"nonfinite_step_{state.iteration:06d}.wrbx",
                    Checkpoint.from_model(state.model, {"iteration": state.iteration}))
    return path


def train_step(batch: Sequence[Sample], state: TrainState,
               cfg: TrainConfig) -> Tuple[Optional[Dict[str, float]], TrainState]:
    """Sample a view, compute the mode's loss parts and take one optimiser step.

    Returns:
        (loss parts as floats, state); parts are None when the step was skipped
        because no location was assigned to any object.

    Raises:
        NumericalError: the loss is not finite (a diagnostic dump is written first).
    """
    model = state.model
    model.train()
    view = sample_view(cfg.view_mode, state.rng, cfg.views.rotation_range, cfg.views.scale_range)
    inputs = [prepare_sample(sample, view, cfg, state) for sample in batch]
    images = to_batch([item.image for item in inputs] + [item.view_image for item in inputs])

    if cfg.end_to_end:
        parts, num_pos = end_to_end_losses(model, inputs, view, cfg, images)
        total = total_loss(parts, LossMode.POINT_SYNTHESIS, cfg.weights)
    else:
        parts, num_pos = dense_losses(model, inputs, view, cfg, images)
        total = total_loss(parts, cfg.loss_mode, cfg.weights)
        if model.point_subnet is not None:
            sub_parts = subnet_losses(model, inputs, images[:len(inputs)])
            total = total + total_loss(sub_parts, LossMode.POINT_SUBNET, cfg.weights)
            parts.update({f"subnet_{name}": value for name, value in sub_parts.items()})

    if num_pos == 0:
        logging.warning(f"Iteration {state.iteration}: no positive locations in batch "
                        f"{[item.image_id for item in inputs]}; step skipped")
        return None, state

    if not torch.isfinite(total):
        dump = dump_diagnostics(state, parts, [item.image_id for item in inputs])
        logging.error(f"Non-finite loss at iteration {state.iteration}; diagnostics in {dump}")
        raise NumericalError(f"non-finite loss at iteration {state.iteration}", dump)

    state.optimizer.zero_grad(set_to_none=True)
    total.backward()
    if cfg.optim.grad_clip is not None:
        torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.optim.grad_clip)
    state.optimizer.step()
    state.scheduler.step()
    state.iteration += 1

    record = {name: _as_float(part) for name, part in parts.items()}
    record["total"] = float(total.detach())
    record["num_pos"] = num_pos
    return record, state
