"""Weakly-supervised box losses and the dense classification / centerness losses."""

from __future__ import annotations

from typing import Optional, Sequence, Union

import torch
import torch.nn.functional as F

from dataio.annotations import LabelKind
from geometry.boxes import RBoxLike, as_rboxes
from geometry.overlaps import circum_iou_loss, rotated_iou_loss

FOCAL_GAMMA = 2.0
FOCAL_ALPHA = 0.25


def _hbox_mask(kind, count: int, device) -> torch.Tensor:
    if isinstance(kind, torch.Tensor):
        return kind.to(device=device, dtype=torch.bool).reshape(-1)
    if isinstance(kind, (LabelKind, str)):
        return torch.full((count,), LabelKind(kind) is LabelKind.HBOX, dtype=torch.bool, device=device)
    return torch.tensor([LabelKind(k) is LabelKind.HBOX for k in kind], dtype=torch.bool, device=device)


def loss_box_ws(pred: RBoxLike, gt: RBoxLike, kind: Union[LabelKind, Sequence[LabelKind], torch.Tensor],
                weights: Optional[torch.Tensor] = None, reduction: str = "mean") -> torch.Tensor:
    """Box loss against coarse or exact labels.

    HBox targets (given as theta = 0 RBoxes) use CircumIoU so only the
    prediction's circumscribed box in the target orientation is supervised;
    RBox targets use -ln RotatedIoU.

    Args:
        pred, gt: (N, 5) boxes.
        kind: one label kind for all rows, one per row, or a bool "is hbox" mask.
        weights: optional (N,) per-row weights (e.g. centerness targets).
        reduction: "mean", "sum" or "none".
    """
    pred = as_rboxes(pred).reshape(-1, 5)
    gt = as_rboxes(gt).reshape(-1, 5).to(pred)
    if pred.shape[0] == 0:
        return pred.sum() * 0.0
    is_hbox = _hbox_mask(kind, pred.shape[0], pred.device)
    losses = torch.where(is_hbox, circum_iou_loss(pred, gt), rotated_iou_loss(pred, gt))
    if weights is not None:
        losses = losses * weights
        if reduction == "mean":
            return losses.sum() / weights.sum().clamp(min=1e-6)
    if reduction == "none":
        return losses
    return losses.sum() if reduction == "sum" else losses.mean()


def loss_cls(logits: torch.Tensor, targets: torch.Tensor, num_pos: Optional[float] = None,
             gamma: float = FOCAL_GAMMA, alpha: float = FOCAL_ALPHA) -> torch.Tensor:
    """Sigmoid focal loss summed over locations and normalised by the positive count.

    Args:
        logits: (L, K) class logits.
        targets: (L,) class index in [0, K), K for background, -1 to ignore.
    """
    num_classes = logits.shape[-1]
    valid = targets >= 0
    logits, targets = logits[valid], targets[valid]
    one_hot = F.one_hot(targets.clamp(max=num_classes), num_classes + 1)[:, :num_classes].to(logits.dtype)
    prob = torch.sigmoid(logits)
    ce = F.binary_cross_entropy_with_logits(logits, one_hot, reduction="none")
    p_t = prob * one_hot + (1 - prob) * (1 - one_hot)
    alpha_t = alpha * one_hot + (1 - alpha) * (1 - one_hot)
    loss = alpha_t * (1 - p_t) ** gamma * ce
    if num_pos is None:
        num_pos = float((targets < num_classes).sum())
    return loss.sum() / max(num_pos, 1.0)


def centerness_target(ltrb: torch.Tensor) -> torch.Tensor:
    """sqrt(min(l, r) / max(l, r) * min(t, b) / max(t, b)) for (..., 4) offsets."""
    left, top, right, bottom = ltrb.unbind(-1)
    lr = torch.minimum(left, right) / torch.maximum(left, right).clamp(min=1e-12)
    tb = torch.minimum(top, bottom) / torch.maximum(top, bottom).clamp(min=1e-12)
    return torch.sqrt((lr * tb).clamp(min=0.0))


def loss_cn(logits: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Binary cross-entropy of centerness logits at positive locations."""
    if logits.numel() == 0:
        return logits.sum() * 0.0
    return F.binary_cross_entropy_with_logits(logits, targets.to(logits.dtype), reduction="mean")
