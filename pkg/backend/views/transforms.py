"""Flip / rotate / scale views of an image together with its annotations.

Every view is a planar affine map on image coordinates (x right, y down):

    flip    (x, y) -> (x, H - y)
    rotate  p -> c + Rot(R) (p - c), c = (W/2, H/2)
    scale   p -> s p

The output canvas always keeps the input size so feature grids of the
original and the transformed view line up.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Dict, Tuple

import numpy as np
import torch
from scipy import ndimage

from dataio.annotations import ImageAnnotations, Instance
from geometry.boxes import HBox, PointLabel, RBox, normalize_rboxes

DEFAULT_ROTATION_RANGE = (math.pi / 4, 3 * math.pi / 4)
DEFAULT_SCALE_RANGE = (0.5, 1.5)


class ViewKind(str, Enum):
    FLIP = "flip"
    ROTATE = "rotate"
    SCALE = "scale"


class ViewMode(str, Enum):
    """Which view distribution a training run samples from."""
    HBOX = "hbox"
    POINT = "point"
    UNIFIED = "unified"


class PaddingMode(str, Enum):
    REFLECTION = "reflection"
    ZEROS = "zeros"


VIEW_DISTRIBUTIONS: Dict[ViewMode, Dict[ViewKind, float]] = {
    ViewMode.HBOX: {ViewKind.ROTATE: 0.95, ViewKind.FLIP: 0.05},
    ViewMode.UNIFIED: {ViewKind.ROTATE: 0.95, ViewKind.FLIP: 0.05},
    ViewMode.POINT: {ViewKind.ROTATE: 0.665, ViewKind.FLIP: 0.035, ViewKind.SCALE: 0.30},
}

_SCIPY_MODES = {PaddingMode.REFLECTION: "reflect", PaddingMode.ZEROS: "constant"}


@dataclass(frozen=True)
class ViewTransform:
    kind: ViewKind
    angle: float = 0.0
    scale: float = 1.0

    def matrix(self, width: int, height: int) -> np.ndarray:
        """3x3 homogeneous forward map on (x, y)."""
        if self.kind is ViewKind.FLIP:
            return np.array([[1.0, 0.0, 0.0], [0.0, -1.0, float(height)], [0.0, 0.0, 1.0]])
        if self.kind is ViewKind.SCALE:
            return np.diag([self.scale, self.scale, 1.0])
        c, s = math.cos(self.angle), math.sin(self.angle)
        cx, cy = width / 2, height / 2
        return np.array([
            [c, -s, cx - c * cx + s * cy],
            [s, c, cy - s * cx - c * cy],
            [0.0, 0.0, 1.0],
        ])

    def inverse(self) -> "ViewTransform":
        if self.kind is ViewKind.ROTATE:
            return replace(self, angle=-self.angle)
        if self.kind is ViewKind.SCALE:
            return replace(self, scale=1.0 / self.scale)
        return self

    def map_points(self, points, width: int, height: int) -> torch.Tensor:
        """Apply the forward map to (..., 2) points."""
        points = torch.as_tensor(points, dtype=torch.float64) if not isinstance(points, torch.Tensor) else points
        m = torch.as_tensor(self.matrix(width, height), dtype=points.dtype, device=points.device)
        return points @ m[:2, :2].T + m[:2, 2]

    def map_rboxes(self, boxes: torch.Tensor, width: int, height: int) -> torch.Tensor:
        """Map (..., 5) boxes; the result is long-edge normalised."""
        centers = self.map_points(boxes[..., :2], width, height)
        w, h, theta = boxes[..., 2], boxes[..., 3], boxes[..., 4]
        if self.kind is ViewKind.FLIP:
            theta = -theta
        elif self.kind is ViewKind.ROTATE:
            theta = theta + self.angle
        else:
            w, h = w * self.scale, h * self.scale
        mapped = torch.cat([centers, torch.stack([w, h, theta], -1)], -1)
        return normalize_rboxes(mapped)

    def map_hboxes(self, hboxes: torch.Tensor, width: int, height: int) -> torch.Tensor:
        """Map (..., 4) corner boxes and re-circumscribe them."""
        x1, y1, x2, y2 = hboxes.unbind(-1)
        corners = torch.stack([torch.stack([x1, y1], -1), torch.stack([x2, y1], -1),
                               torch.stack([x2, y2], -1), torch.stack([x1, y2], -1)], -2)
        mapped = self.map_points(corners, width, height)
        lo, hi = mapped.min(-2).values, mapped.max(-2).values
        return torch.cat([lo, hi], -1)

    def angle_shift(self) -> float:
        """Offset the consistency loss expects between view and original angles."""
        return self.angle if self.kind is ViewKind.ROTATE else 0.0


def sample_view(mode: ViewMode, rng: np.random.Generator,
                rotation_range: Tuple[float, float] = DEFAULT_ROTATION_RANGE,
                scale_range: Tuple[float, float] = DEFAULT_SCALE_RANGE) -> ViewTransform:
    """Draw one view from the mode's flip / rotate / scale distribution."""
    table = VIEW_DISTRIBUTIONS[ViewMode(mode)]
    kinds = list(table)
    kind = kinds[rng.choice(len(kinds), p=[table[k] for k in kinds])]
    if kind is ViewKind.ROTATE:
        return ViewTransform(kind, angle=float(rng.uniform(*rotation_range)))
    if kind is ViewKind.SCALE:
        low, high = scale_range
        s = float(rng.uniform(low, high))
        while s <= low:  # open interval
            s = float(rng.uniform(low, high))
        return ViewTransform(kind, scale=s)
    return ViewTransform(kind)


def warp_image(image: np.ndarray, t: ViewTransform, padding: PaddingMode = PaddingMode.REFLECTION) -> np.ndarray:
    """Resample an (H, W) or (H, W, C) raster through the view (bilinear).

    Pixel (i, j) is sampled at its centre (j + 0.5, i + 0.5).
    """
    height, width = image.shape[:2]
    if t.kind is ViewKind.FLIP:
        return image[::-1].astype(np.float64)

    inverse = np.linalg.inv(t.matrix(width, height))
    # xy <-> (row, col) index coordinates of pixel centres
    to_index = np.array([[0.0, 1.0, -0.5], [1.0, 0.0, -0.5], [0.0, 0.0, 1.0]])
    src = to_index @ inverse @ np.linalg.inv(to_index)
    mode = _SCIPY_MODES[PaddingMode(padding)]

    def warp(channel: np.ndarray) -> np.ndarray:
        return ndimage.affine_transform(channel, src[:2, :2], offset=src[:2, 2], order=1,
                                        mode=mode, cval=0.0, prefilter=False)

    if image.ndim == 2:
        return warp(image.astype(np.float64))
    return np.stack([warp(image[..., c].astype(np.float64)) for c in range(image.shape[2])], axis=-1)


def _map_instance(inst: Instance, t: ViewTransform, width: int, height: int) -> Instance:
    label = inst.label
    if isinstance(label, RBox):
        mapped = t.map_rboxes(label.to_tensor(), width, height)
        new_label = RBox.from_tensor(mapped)
    elif isinstance(label, HBox):
        xmin, ymin, xmax, ymax = t.map_hboxes(label.to_tensor(), width, height).tolist()
        new_label = HBox(xmin, ymin, xmax, ymax)
    else:
        x, y = t.map_points(torch.tensor([label.x, label.y], dtype=torch.float64), width, height).tolist()
        new_label = PointLabel(x, y, label.category)
    return Instance(new_label, inst.category, inst.difficult)


def apply_view(image: np.ndarray, anns: ImageAnnotations, t: ViewTransform,
               padding: PaddingMode = PaddingMode.REFLECTION) -> Tuple[np.ndarray, ImageAnnotations, np.ndarray]:
    """Warp an image and map all of its labels through one view.

    Returns:
        (warped image, mapped annotations, keep mask). The mask is True for
        instances whose mapped centre stays inside the canvas; mapped
        annotations keep every instance so indices line up with the input.
    """
    width, height = anns.width, anns.height
    if image.shape[0] != height or image.shape[1] != width:
        logging.warning(f"Image {anns.image_id} is {image.shape[1]}x{image.shape[0]} "
                        f"but annotations declare {width}x{height}")
    warped = warp_image(image, t, padding)
    instances = [_map_instance(inst, t, width, height) for inst in anns.instances]
    keep = np.array([0 <= inst.center[0] < width and 0 <= inst.center[1] < height for inst in instances],
                    dtype=bool)
    return warped, ImageAnnotations(anns.image_id, width, height, instances), keep

