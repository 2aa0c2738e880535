"""Self-supervised consistency losses between the original and a transformed view."""

from __future__ import annotations

from dataclasses import dataclass

import torch

from angle_coding.phase_coder import snap_loss
from geometry.boxes import RBoxLike, as_rboxes, rboxes_to_hboxes
from geometry.overlaps import hbox_giou


@dataclass
class PairedAngles:
    """Per-object mean angles seen in the original view and in the transformed view."""
    theta: torch.Tensor
    theta_view: torch.Tensor

    def __post_init__(self):
        if self.theta.shape != self.theta_view.shape:
            raise ValueError(f"Paired angle shapes differ: {tuple(self.theta.shape)} vs {tuple(self.theta_view.shape)}")

    def __len__(self) -> int:
        return int(self.theta.numel())

    @classmethod
    def empty(cls, dtype: torch.dtype = torch.float32) -> "PairedAngles":
        return cls(torch.zeros(0, dtype=dtype), torch.zeros(0, dtype=dtype))


@dataclass
class LossTerm:
    """A reduced loss plus the number of objects it was averaged over."""
    value: torch.Tensor
    count: int

    @property
    def no_pairs(self) -> bool:
        return self.count == 0

    @classmethod
    def zero(cls, like: torch.Tensor | None = None) -> "LossTerm":
        value = like.new_zeros(()) if like is not None else torch.zeros(())
        return cls(value, 0)


def loss_flp(pairs: PairedAngles, snap: bool = True) -> LossTerm:
    """Flip consistency: a mirrored view must predict the negated angle."""
    if len(pairs) == 0:
        return LossTerm.zero(pairs.theta)
    return LossTerm(snap_loss(pairs.theta_view + pairs.theta, torch.zeros_like(pairs.theta), snap=snap).mean(),
                    len(pairs))


def loss_rot(pairs: PairedAngles, rotation: float, snap: bool = True) -> LossTerm:
    """Rotation consistency: a view rotated by R must predict theta + R."""
    if len(pairs) == 0:
        return LossTerm.zero(pairs.theta)
    target = torch.full_like(pairs.theta, float(rotation))
    return LossTerm(snap_loss(pairs.theta_view - pairs.theta, target, snap=snap).mean(), len(pairs))


def loss_sca(b_ori: RBoxLike, b_trs: RBoxLike, scale: float) -> LossTerm:
    """Scale consistency: 1 - GIoU(r2h(b_ori) * s, r2h(b_trs)), averaged over pairs.

    The scale view maps x -> s x, so scaling the circumscribed box of the
    original prediction is the same coordinate map.
    """
    b_ori, b_trs = as_rboxes(b_ori).reshape(-1, 5), as_rboxes(b_trs).reshape(-1, 5)
    if b_ori.shape[0] == 0:
        return LossTerm.zero(b_ori)
    scaled = rboxes_to_hboxes(b_ori) * scale
    return LossTerm((1.0 - hbox_giou(scaled, rboxes_to_hboxes(b_trs))).mean(), int(b_ori.shape[0]))
