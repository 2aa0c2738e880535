"""Procedural scenes of reflection-symmetric shapes with exact RBox ground truth.

Each shape lives in its box frame (u along the box width, v along the height)
and fills u in [-w/2, w/2], v in [-h/2, h/2] exactly, so the box it is drawn
from is its ground truth. All families except `scalene` are mirror symmetric
about the u-axis (v -> -v); `scalene` is the asymmetric control.
"""

from __future__ import annotations

import logging
import math
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field, model_validator
from scipy import ndimage

from dataio.annotations import AnnotationSet, ImageAnnotations, Instance
from geometry.boxes import RBox, rbox_to_corners, rboxes_to_hboxes
from geometry.overlaps import pairwise_rotated_iou
from utils.errors import ConfigError, DataError


class ShapeFamily(str, Enum):
    ELLIPSE = "ellipse"
    ROUNDED_RECT = "rounded_rect"
    KITE = "kite"
    ARROW = "arrow"
    DISC = "disc"
    SCALENE = "scalene"


ASYMMETRIC_FAMILIES = frozenset({ShapeFamily.SCALENE})


class SceneConfig(BaseModel):
    image_size: int = Field(default=128, description="Square canvas side in pixels")
    families: List[ShapeFamily] = Field(
        default_factory=lambda: [ShapeFamily.ELLIPSE, ShapeFamily.ROUNDED_RECT, ShapeFamily.KITE, ShapeFamily.ARROW],
        description="Shape families; the category id of a shape is its index in this list")
    count_range: Tuple[int, int] = Field(default=(2, 6), description="Inclusive number of shapes per image")
    size_range: Tuple[float, float] = Field(default=(14.0, 48.0), description="Long side of a shape in pixels")
    aspect_range: Tuple[float, float] = Field(default=(1.6, 3.5), description="Long side over short side")
    max_iou: float = Field(default=0.05, description="Packing limit on pairwise rotated IoU")
    max_attempts: int = Field(default=200, description="Placement retries per shape before giving up")
    noise_std: float = Field(default=0.02, description="Additive Gaussian pixel noise")
    texture: bool = Field(default=True, description="Low-frequency background texture")
    asymmetric: bool = Field(default=False, description="Replace every family by the asymmetric control shape")

    @model_validator(mode="after")
    def _check_ranges(self) -> "SceneConfig":
        for name in ("count_range", "size_range", "aspect_range"):
            low, high = getattr(self, name)
            if low > high or low <= 0:
                raise ConfigError(f"{name} must be an increasing positive pair, got {(low, high)}")
        if not self.families:
            raise ConfigError("At least one shape family is required")
        if self.size_range[1] >= self.image_size:
            raise ConfigError(f"size_range {self.size_range} does not fit a {self.image_size}px canvas")
        return self

    @property
    def class_names(self) -> List[str]:
        return [ShapeFamily.SCALENE.value] if self.asymmetric else [f.value for f in self.families]

    def family_of(self, category: int) -> ShapeFamily:
        return ShapeFamily.SCALENE if self.asymmetric else self.families[category]


def shape_membership(family: ShapeFamily, u: np.ndarray, v: np.ndarray, half_w: float, half_h: float) -> np.ndarray:
    """Boolean mask of box-frame coordinates that fall inside the shape."""
    au, av = np.abs(u), np.abs(v)
    inside_box = (au <= half_w) & (av <= half_h)
    if family in (ShapeFamily.ELLIPSE, ShapeFamily.DISC):
        return (u / half_w) ** 2 + (v / half_h) ** 2 <= 1.0
    if family is ShapeFamily.ROUNDED_RECT:
        r = 0.35 * min(half_w, half_h)
        du = np.maximum(au - (half_w - r), 0.0)
        dv = np.maximum(av - (half_h - r), 0.0)
        return inside_box & (du ** 2 + dv ** 2 <= r ** 2)
    if family is ShapeFamily.KITE:
        t = 0.3 * half_w
        front = (u >= t) & (av <= half_h * (half_w - u) / (half_w - t))
        back = (u < t) & (av <= half_h * (u + half_w) / (t + half_w))
        return inside_box & (front | back)
    if family is ShapeFamily.ARROW:
        head = 0.8 * half_w
        shaft = (u <= half_w - head) & (av <= 0.4 * half_h)
        tip = (u > half_w - head) & (av <= half_h * (half_w - u) / head)
        return inside_box & (shaft | tip)
    if family is ShapeFamily.SCALENE:
        # triangle touching all four box sides, no mirror axis
        tri = np.array([[-half_w, -half_h], [half_w, -0.3 * half_h], [-0.45 * half_w, half_h]])
        signs = []
        for k in range(3):
            a, b = tri[k], tri[(k + 1) % 3]
            signs.append((b[0] - a[0]) * (v - a[1]) - (b[1] - a[1]) * (u - a[0]) >= 0)
        return signs[0] & signs[1] & signs[2]
    raise DataError(f"Unknown shape family {family}")


def render_shape_mask(family: ShapeFamily, box: RBox, width: int, height: int, supersample: int = 4) -> np.ndarray:
    """Anti-aliased (height, width) coverage raster of one shape."""
    coverage = np.zeros((height, width))
    x0, y0, x1, y1 = rboxes_to_hboxes(box.to_tensor()).tolist()
    c0, r0 = max(int(math.floor(x0)), 0), max(int(math.floor(y0)), 0)
    c1, r1 = min(int(math.ceil(x1)), width), min(int(math.ceil(y1)), height)
    if c1 <= c0 or r1 <= r0:
        return coverage

    offsets = (np.arange(supersample) + 0.5) / supersample
    xs = (np.arange(c0, c1)[:, None] + offsets[None, :]).ravel()
    ys = (np.arange(r0, r1)[:, None] + offsets[None, :]).ravel()
    gx, gy = np.meshgrid(xs, ys)
    c, s = math.cos(box.theta), math.sin(box.theta)
    dx, dy = gx - box.cx, gy - box.cy
    u = dx * c + dy * s
    v = -dx * s + dy * c
    inside = shape_membership(family, u, v, box.w / 2, box.h / 2).astype(np.float64)
    rows, cols = r1 - r0, c1 - c0
    coverage[r0:r1, c0:c1] = inside.reshape(rows, supersample, cols, supersample).mean(axis=(1, 3))
    return coverage


def _background(size: int, config: SceneConfig, rng: np.random.Generator) -> np.ndarray:
    base = rng.uniform(0.15, 0.45, size=3)
    image = np.broadcast_to(base, (size, size, 3)).copy()
    if config.texture:
        texture = ndimage.gaussian_filter(rng.normal(0.0, 1.0, (size, size)), sigma=size / 16)
        texture /= max(np.abs(texture).max(), 1e-12)
        image += 0.08 * texture[..., None]
    return image


def render_scene(shapes: Sequence[Tuple[ShapeFamily, RBox]], config: SceneConfig, rng: np.random.Generator,
                 image_id: str = "scene", categories: Optional[Sequence[int]] = None
                 ) -> Tuple[np.ndarray, ImageAnnotations]:
    """Draw given shapes over a textured background.

    Returns:
        (H, W, 3) image in [0, 1] and the shapes' boxes as RBox annotations.
    """
    size = config.image_size
    image = _background(size, config, rng)
    instances = []
    for idx, (family, box) in enumerate(shapes):
        mask = render_shape_mask(family, box, size, size)
        color = rng.uniform(0.55, 0.95, size=3)
        image = image + mask[..., None] * (color - image)
        category = categories[idx] if categories is not None else 0
        instances.append(Instance(box, int(category)))
    if config.noise_std > 0:
        image = image + rng.normal(0.0, config.noise_std, image.shape)
    return np.clip(image, 0.0, 1.0), ImageAnnotations(image_id, size, size, instances)


def _fits_canvas(box: RBox, size: int) -> bool:
    corners = rbox_to_corners(box)
    return bool(np.all(corners >= 0) and np.all(corners <= size))


def sample_layout(config: SceneConfig, rng: np.random.Generator) -> List[Tuple[int, RBox]]:
    """Rejection-sample non-overlapping boxes that lie fully inside the canvas.

    Raises:
        DataError: a shape could not be placed within `max_attempts` tries.
    """
    size = config.image_size
    count = int(rng.integers(config.count_range[0], config.count_range[1] + 1))
    num_classes = len(config.class_names)
    placed: List[Tuple[int, RBox]] = []
    for _ in range(count):
        for _attempt in range(config.max_attempts):
            category = int(rng.integers(num_classes))
            family = config.family_of(category)
            long_side = float(rng.uniform(*config.size_range))
            if family is ShapeFamily.DISC:
                short_side, theta = long_side, 0.0
            else:
                short_side = long_side / float(rng.uniform(*config.aspect_range))
                theta = float(rng.uniform(-math.pi / 2, math.pi / 2))
            margin = long_side / 2
            box = RBox(float(rng.uniform(margin, size - margin)), float(rng.uniform(margin, size - margin)),
                       long_side, short_side, theta)
            if not _fits_canvas(box, size):
                continue
            if placed:
                ious = pairwise_rotated_iou([box], [b for _, b in placed])
                if float(ious.max()) >= config.max_iou:
                    continue
            placed.append((category, box))
            break
        else:
            logging.error(f"Placement failed after {config.max_attempts} attempts with {len(placed)} shapes placed")
            raise DataError(f"infeasible packing: could not place shape {len(placed) + 1} of {count}")
    return placed


def gen_symmetric_scene(config: SceneConfig, rng: np.random.Generator,
                        image_id: str = "scene") -> Tuple[np.ndarray, ImageAnnotations]:
    layout = sample_layout(config, rng)
    shapes = [(config.family_of(category), box) for category, box in layout]
    return render_scene(shapes, config, rng, image_id, [category for category, _ in layout])


def gen_dataset(config: SceneConfig, count: int, rng: np.random.Generator,
                prefix: str = "img") -> Tuple[List[np.ndarray], AnnotationSet]:
    images, annotations = [], AnnotationSet(config.class_names)
    for idx in range(count):
        image, anns = gen_symmetric_scene(config, rng, image_id=f"{prefix}_{idx:05d}")
        images.append(image)
        annotations.images.append(anns)
    logging.info(f"Generated {count} scenes with {annotations.num_instances()} shapes")
    return images, annotations
