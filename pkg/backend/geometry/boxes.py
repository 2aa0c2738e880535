"""Oriented / horizontal box records and their tensor forms.

Coordinates are image pixels: x grows to the right, y grows downwards, pixel
(i, j) covers [j, j+1) x [i, i+1). Angles are radians and every RBox is kept in
the long-edge convention (w >= h, theta in [-pi/2, pi/2)).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence, Union

import numpy as np
import torch

from utils.errors import DataError

HALF_PI = math.pi / 2


def wrap_angle(theta: float, period: float = math.pi) -> float:
    """Fold an angle into [-period/2, period/2)."""
    return (theta + period / 2) % period - period / 2


@dataclass(frozen=True)
class RBox:
    """Rotated rectangle: centre, width along the box x-axis, height, rotation."""
    cx: float
    cy: float
    w: float
    h: float
    theta: float = 0.0

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise DataError(f"RBox sides must be positive, got w={self.w}, h={self.h}")

    def normalized(self) -> "RBox":
        w, h, theta = self.w, self.h, self.theta
        if w < h:
            w, h, theta = h, w, theta + HALF_PI
        return RBox(self.cx, self.cy, w, h, wrap_angle(theta))

    @property
    def area(self) -> float:
        return self.w * self.h

    def to_tensor(self, dtype: torch.dtype = torch.float64) -> torch.Tensor:
        return torch.tensor([self.cx, self.cy, self.w, self.h, self.theta], dtype=dtype)

    def to_list(self) -> list[float]:
        return [self.cx, self.cy, self.w, self.h, self.theta]

    @classmethod
    def from_tensor(cls, t: Union[torch.Tensor, np.ndarray, Sequence[float]]) -> "RBox":
        values = [float(v) for v in (t.tolist() if hasattr(t, "tolist") else t)]
        return cls(*values)


@dataclass(frozen=True)
class HBox:
    """Axis-aligned box given by its corner extremes."""
    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self):
        if not (self.xmin < self.xmax and self.ymin < self.ymax):
            raise DataError(f"HBox needs xmin < xmax and ymin < ymax, got {self}")

    @property
    def width(self) -> float:
        return self.xmax - self.xmin

    @property
    def height(self) -> float:
        return self.ymax - self.ymin

    @property
    def center(self) -> tuple[float, float]:
        return (self.xmin + self.xmax) / 2, (self.ymin + self.ymax) / 2

    def to_rbox(self) -> RBox:
        """The same rectangle as an RBox with theta = 0 (not long-edge normalised)."""
        cx, cy = self.center
        return RBox(cx, cy, self.width, self.height, 0.0)

    def to_tensor(self, dtype: torch.dtype = torch.float64) -> torch.Tensor:
        return torch.tensor([self.xmin, self.ymin, self.xmax, self.ymax], dtype=dtype)

    def to_list(self) -> list[float]:
        return [self.xmin, self.ymin, self.xmax, self.ymax]


@dataclass(frozen=True)
class PointLabel:
    x: float
    y: float
    category: int = 0

    def inside(self, width: int, height: int) -> bool:
        return 0 <= self.x < width and 0 <= self.y < height


RBoxLike = Union[RBox, torch.Tensor, np.ndarray, Sequence]


def as_rboxes(boxes: RBoxLike, dtype: torch.dtype = torch.float64) -> torch.Tensor:
    """Convert an RBox, a sequence of RBoxes or an array into a (..., 5) tensor.

    Tensors pass through untouched so autograd graphs survive.
    """
    if isinstance(boxes, torch.Tensor):
        return boxes
    if isinstance(boxes, RBox):
        return boxes.to_tensor(dtype)
    if isinstance(boxes, np.ndarray):
        return torch.as_tensor(boxes, dtype=dtype)
    items = list(boxes)
    if items and isinstance(items[0], RBox):
        return torch.stack([b.to_tensor(dtype) for b in items])
    return torch.as_tensor(items, dtype=dtype).reshape(-1, 5) if items else torch.zeros((0, 5), dtype=dtype)


def as_hboxes(boxes: Union[HBox, torch.Tensor, Iterable], dtype: torch.dtype = torch.float64) -> torch.Tensor:
    if isinstance(boxes, torch.Tensor):
        return boxes
    if isinstance(boxes, HBox):
        return boxes.to_tensor(dtype)
    items = list(boxes)
    if items and isinstance(items[0], HBox):
        return torch.stack([b.to_tensor(dtype) for b in items])
    return torch.as_tensor(items, dtype=dtype).reshape(-1, 4)


def normalize_rboxes(boxes: torch.Tensor) -> torch.Tensor:
    """Long-edge normalisation of a (..., 5) tensor; idempotent."""
    cx, cy, w, h, theta = boxes.unbind(-1)
    swap = w < h
    w2 = torch.where(swap, h, w)
    h2 = torch.where(swap, w, h)
    theta = torch.where(swap, theta + HALF_PI, theta)
    theta = torch.remainder(theta + HALF_PI, math.pi) - HALF_PI
    return torch.stack([cx, cy, w2, h2, theta], dim=-1)


def rotation_matrix(theta: torch.Tensor) -> torch.Tensor:
    c, s = torch.cos(theta), torch.sin(theta)
    return torch.stack([torch.stack([c, -s], -1), torch.stack([s, c], -1)], -2)


def rbox_corners(boxes: torch.Tensor) -> torch.Tensor:
    """Corners of (..., 5) boxes as (..., 4, 2), counter-clockwise (positive shoelace)."""
    cx, cy, w, h, theta = boxes.unbind(-1)
    hw, hh = w / 2, h / 2
    local_x = torch.stack([-hw, hw, hw, -hw], -1)
    local_y = torch.stack([-hh, -hh, hh, hh], -1)
    c, s = torch.cos(theta)[..., None], torch.sin(theta)[..., None]
    x = cx[..., None] + local_x * c - local_y * s
    y = cy[..., None] + local_x * s + local_y * c
    return torch.stack([x, y], -1)


def rbox_to_corners(box: RBoxLike) -> np.ndarray:
    """Four ordered corners of a single RBox as a (4, 2) float array."""
    return rbox_corners(as_rboxes(box)).detach().cpu().numpy()


def rboxes_to_hboxes(boxes: torch.Tensor) -> torch.Tensor:
    """Circumscribed axis-aligned boxes (xmin, ymin, xmax, ymax) of (..., 5) boxes."""
    cx, cy, w, h, theta = boxes.unbind(-1)
    c, s = torch.cos(theta).abs(), torch.sin(theta).abs()
    ex = (c * w + s * h) / 2
    ey = (s * w + c * h) / 2
    return torch.stack([cx - ex, cy - ey, cx + ex, cy + ey], -1)


def r2h(box: RBoxLike) -> HBox:
    """Smallest axis-aligned box containing all corners of an RBox."""
    xmin, ymin, xmax, ymax = rboxes_to_hboxes(as_rboxes(box)).tolist()
    return HBox(xmin, ymin, xmax, ymax)


def hboxes_to_rboxes(hboxes: torch.Tensor) -> torch.Tensor:
    """(..., 4) corner boxes as theta = 0 RBoxes."""
    x1, y1, x2, y2 = hboxes.unbind(-1)
    return torch.stack([(x1 + x2) / 2, (y1 + y2) / 2, x2 - x1, y2 - y1, torch.zeros_like(x1)], -1)


def points_in_rboxes(points: torch.Tensor, boxes: torch.Tensor) -> torch.Tensor:
    """Membership of (P, 2) points in (B, 5) boxes as a (P, B) bool tensor."""
    rel = points[:, None, :] - boxes[None, :, :2]
    c, s = torch.cos(boxes[:, 4]), torch.sin(boxes[:, 4])
    lx = rel[..., 0] * c + rel[..., 1] * s
    ly = -rel[..., 0] * s + rel[..., 1] * c
    return (lx.abs() <= boxes[:, 2] / 2) & (ly.abs() <= boxes[:, 3] / 2)
