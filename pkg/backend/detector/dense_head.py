"""FCOS-style dense head shared across pyramid levels, and box decoding."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Sequence

import torch
from torch import nn

from angle_coding.phase_coder import N_ENC, decode_predicted
from detector.backbone import STRIDES, level_points

PRIOR_PROB = 0.01


@dataclass
class DensePrediction:
    """Flattened per-location outputs of all levels (location order: level, row, column).

    ltrb holds positive distances in pixels (l, t, r, b) measured in the
    rotated frame of the predicted box.
    """
    cls_logits: torch.Tensor  # (B, L, K)
    centerness: torch.Tensor  # (B, L)
    ltrb: torch.Tensor  # (B, L, 4)
    angle_code: torch.Tensor  # (B, L, N_ENC)
    points: torch.Tensor  # (L, 2)
    strides: torch.Tensor  # (L,)
    levels: torch.Tensor  # (L,)

    @property
    def angles(self) -> torch.Tensor:
        return decode_predicted(self.angle_code)

    def boxes(self, angles: torch.Tensor | None = None) -> torch.Tensor:
        """(B, L, 5) decoded boxes; `angles` overrides the predicted angles (e.g. detached)."""
        return decode_ltrb(self.points, self.ltrb, self.angles if angles is None else angles)


def decode_ltrb(points: torch.Tensor, ltrb: torch.Tensor, angles: torch.Tensor) -> torch.Tensor:
    """Box from a location, rotated-frame distances and an angle.

    centre = p + Rot(theta) ((r - l) / 2, (b - t) / 2), w = l + r, h = t + b.
    """
    left, top, right, bottom = ltrb.unbind(-1)
    ox, oy = (right - left) / 2, (bottom - top) / 2
    c, s = torch.cos(angles), torch.sin(angles)
    cx = points[..., 0] + ox * c - oy * s
    cy = points[..., 1] + ox * s + oy * c
    return torch.stack([cx, cy, left + right, top + bottom, angles], -1)


def encode_ltrb(points: torch.Tensor, boxes: torch.Tensor) -> torch.Tensor:
    """Distances from locations to the four sides of (L, 5) boxes, in each box's frame."""
    rel = points - boxes[..., :2]
    c, s = torch.cos(boxes[..., 4]), torch.sin(boxes[..., 4])
    lx = rel[..., 0] * c + rel[..., 1] * s
    ly = -rel[..., 0] * s + rel[..., 1] * c
    half_w, half_h = boxes[..., 2] / 2, boxes[..., 3] / 2
    return torch.stack([lx + half_w, ly + half_h, half_w - lx, half_h - ly], -1)


class Scale(nn.Module):
    def __init__(self, init: float = 1.0):
        super().__init__()
        self.scale = nn.Parameter(torch.tensor(float(init)))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x * self.scale


def _tower(channels: int, depth: int) -> nn.Sequential:
    layers: List[nn.Module] = []
    for _ in range(depth):
        layers += [nn.Conv2d(channels, channels, 3, padding=1), nn.GroupNorm(min(8, channels), channels),
                   nn.ReLU(inplace=True)]
    return nn.Sequential(*layers)


class DenseHead(nn.Module):
    def __init__(self, num_classes: int, channels: int = 32, depth: int = 2, strides: Sequence[int] = STRIDES):
        super().__init__()
        self.num_classes = num_classes
        self.strides = tuple(strides)
        self.cls_tower = _tower(channels, depth)
        self.reg_tower = _tower(channels, depth)
        self.cls_logits = nn.Conv2d(channels, num_classes, 3, padding=1)
        self.centerness = nn.Conv2d(channels, 1, 3, padding=1)
        self.bbox_pred = nn.Conv2d(channels, 4, 3, padding=1)
        self.angle_pred = nn.Conv2d(channels, N_ENC, 3, padding=1)
        self.scales = nn.ModuleList([Scale() for _ in self.strides])
        nn.init.constant_(self.cls_logits.bias, -math.log((1 - PRIOR_PROB) / PRIOR_PROB))

    def forward(self, pyramid: List[torch.Tensor], image_size: tuple[int, int]) -> DensePrediction:
        cls_out, cn_out, box_out, angle_out = [], [], [], []
        for feature, stride, scale in zip(pyramid, self.strides, self.scales):
            batch = feature.shape[0]
            cls_feat = self.cls_tower(feature)
            reg_feat = self.reg_tower(feature)
            cls_out.append(self.cls_logits(cls_feat).flatten(2).transpose(1, 2))
            cn_out.append(self.centerness(reg_feat).reshape(batch, -1))
            # exp keeps distances positive; they are predicted in stride units
            dist = torch.exp(scale(self.bbox_pred(reg_feat)).clamp(max=8.0)) * stride
            box_out.append(dist.flatten(2).transpose(1, 2))
            angle_out.append(self.angle_pred(reg_feat).flatten(2).transpose(1, 2))

        points, strides, levels, _ = level_points(image_size[0], image_size[1], self.strides,
                                                  device=pyramid[0].device, dtype=pyramid[0].dtype)
        return DensePrediction(torch.cat(cls_out, 1), torch.cat(cn_out, 1), torch.cat(box_out, 1),
                               torch.cat(angle_out, 1), points, strides, levels)
