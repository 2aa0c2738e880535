"""Knowledge-combination patterns: turn labelled points into boxes the detector can learn from.

Around every labelled point a gray-scale basic pattern of the point's class is
recoloured with the local face / edge colours, randomly flipped, rotated and
resized, dropped at a random spot and alpha-blended into the image. The box of
every pasted pattern is known exactly and becomes box supervision.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from dataio.annotations import Instance
from geometry.boxes import PointLabel, RBox, rboxes_to_hboxes
from geometry.nms import rbox_nms
from synthesis.scenes import SceneConfig, ShapeFamily, render_shape_mask
from utils.errors import DataError

FACE_WINDOW = 5
EDGE_WINDOW = 33
ALPHA_MIN = 0.1
ALPHA_SPAN = 0.9
RESIZE_STD = 0.4
PATTERN_NMS_IOU = 0.05


@dataclass
class BasicPattern:
    category: int
    pattern: np.ndarray  # (h0, w0), values strictly inside (0, 1)

    def __post_init__(self):
        if self.pattern.ndim != 2 or self.pattern.min() <= 0 or self.pattern.max() >= 1:
            raise DataError(f"Basic pattern for category {self.category} must be 2-D with values in (0, 1)")

    @property
    def w0(self) -> int:
        return self.pattern.shape[1]

    @property
    def h0(self) -> int:
        return self.pattern.shape[0]


@dataclass
class SynthInstance:
    """A pasted pattern.

    `frame` is the box in which `alpha` and `pixels` are laid out (columns
    along its width, rows along its height); `box` is the same rectangle in
    long-edge form.
    """
    frame: RBox
    alpha: np.ndarray
    pixels: np.ndarray
    category: int

    @property
    def box(self) -> RBox:
        return self.frame.normalized()


def _window(image: np.ndarray, x: float, y: float, size: int) -> Tuple[slice, slice]:
    height, width = image.shape[:2]
    row, col = int(math.floor(y)), int(math.floor(x))
    half = size // 2
    return (slice(max(row - half, 0), min(row + half + 1, height)),
            slice(max(col - half, 0), min(col + half + 1, width)))


def _as_color_image(image: np.ndarray) -> np.ndarray:
    return image[..., None] if image.ndim == 2 else image


def extract_colors(image: np.ndarray, point: PointLabel) -> Tuple[np.ndarray, np.ndarray]:
    """Face colour (5x5 mean) and edge colour (gradient-weighted 33x33 mean) around a point.

    Windows are clipped at the border. A patch without any gradient falls back
    to an edge colour half way between the face colour and the image mean.
    """
    height, width = image.shape[:2]
    if not point.inside(width, height):
        raise DataError(f"Point ({point.x}, {point.y}) lies outside a {width}x{height} image")
    image = _as_color_image(image)

    face = image[_window(image, point.x, point.y, FACE_WINDOW)].reshape(-1, image.shape[2]).mean(0)

    gray = image.mean(-1)
    magnitude = np.hypot(ndimage.sobel(gray, axis=0, mode="reflect"), ndimage.sobel(gray, axis=1, mode="reflect"))
    rows, cols = _window(image, point.x, point.y, EDGE_WINDOW)
    weights = magnitude[rows, cols]
    total = weights.sum()
    if total <= 1e-12:
        logging.debug(f"Flat patch around ({point.x:.1f}, {point.y:.1f}); edge colour falls back to image mean")
        edge = 0.5 * face + 0.5 * image.reshape(-1, image.shape[2]).mean(0)
    else:
        edge = np.tensordot(weights / total, image[rows, cols], axes=([0, 1], [0, 1]))
    return face, edge


def recolor(pattern: np.ndarray, face: np.ndarray, edge: np.ndarray) -> np.ndarray:
    """P * C_face + (1 - P) * C_edge, per pixel and channel."""
    p = np.asarray(pattern, dtype=np.float64)[..., None]
    return p * np.asarray(face, dtype=np.float64) + (1.0 - p) * np.asarray(edge, dtype=np.float64)


def random_resize(w0: float, h0: float, rng: np.random.Generator, sigma_base: Optional[float] = None,
                  std: float = RESIZE_STD) -> Tuple[float, float]:
    """Log-normal resize: w = w0 exp(s_base + s_w), h = h0 exp(s_base + s_w + s_r).

    `sigma_base` is shared by all patterns of one image; it is drawn here when
    not given.
    """
    if w0 <= 0 or h0 <= 0:
        raise DataError(f"Pattern size must be positive, got {w0}x{h0}")
    if sigma_base is None:
        sigma_base = rng.normal(0.0, std)
    sigma_w, sigma_r = rng.normal(0.0, std, size=2)
    return w0 * math.exp(sigma_base + sigma_w), h0 * math.exp(sigma_base + sigma_w + sigma_r)


def alpha_mask(width: int, height: int, rng: Optional[np.random.Generator] = None,
               k: Optional[Tuple[float, float]] = None) -> np.ndarray:
    """Gaussian opacity a1 exp(-k0 x^2 - k1 y^2) + a0 on x, y in [-1, 1]; values in [0.1, 1]."""
    if width < 1 or height < 1:
        raise DataError(f"Alpha mask needs a positive size, got {width}x{height}")
    if k is None:
        if rng is None:
            raise ValueError("alpha_mask needs either rng or explicit k")
        k = tuple(rng.uniform(0.1, 2.0, size=2))
    x = np.linspace(-1.0, 1.0, width) if width > 1 else np.zeros(1)
    y = np.linspace(-1.0, 1.0, height) if height > 1 else np.zeros(1)
    return ALPHA_SPAN * np.exp(-k[0] * x[None, :] ** 2 - k[1] * y[:, None] ** 2) + ALPHA_MIN


def _resize_raster(raster: np.ndarray, width: int, height: int) -> np.ndarray:
    zoom = (height / raster.shape[0], width / raster.shape[1])
    resized = ndimage.zoom(raster, zoom, order=1, mode="nearest", grid_mode=True)
    return np.clip(resized[:height, :width], 1e-6, 1 - 1e-6)


def paste_instance(image: np.ndarray, inst: SynthInstance) -> np.ndarray:
    """Alpha-blend one instance into a copy of `image`.

    Image pixel centres inside the frame are mapped into the frame raster and
    sampled bilinearly; pixels outside the frame are untouched.
    """
    image = _as_color_image(np.asarray(image, dtype=np.float64)).copy()
    height, width = image.shape[:2]
    frame = inst.frame
    x0, y0, x1, y1 = rboxes_to_hboxes(frame.to_tensor()).tolist()
    c0, r0 = max(int(math.floor(x0)), 0), max(int(math.floor(y0)), 0)
    c1, r1 = min(int(math.ceil(x1)), width), min(int(math.ceil(y1)), height)
    if c1 <= c0 or r1 <= r0:
        return image

    gx, gy = np.meshgrid(np.arange(c0, c1) + 0.5, np.arange(r0, r1) + 0.5)
    c, s = math.cos(frame.theta), math.sin(frame.theta)
    dx, dy = gx - frame.cx, gy - frame.cy
    u = dx * c + dy * s
    v = -dx * s + dy * c
    inside = (np.abs(u) <= frame.w / 2) & (np.abs(v) <= frame.h / 2)
    rows = v + inst.alpha.shape[0] / 2 - 0.5
    cols = u + inst.alpha.shape[1] / 2 - 0.5
    coords = np.stack([rows[inside], cols[inside]])

    alpha = ndimage.map_coordinates(inst.alpha, coords, order=1, mode="nearest")
    region = image[r0:r1, c0:c1]
    for ch in range(image.shape[2]):
        fg = ndimage.map_coordinates(inst.pixels[..., ch], coords, order=1, mode="nearest")
        bg = region[..., ch][inside]
        region[..., ch][inside] = bg + alpha * (fg - bg)
    return image


def _fit_inside(w: float, h: float, theta: float, width: int, height: int) -> Tuple[float, float]:
    ex = abs(math.cos(theta)) * w + abs(math.sin(theta)) * h
    ey = abs(math.sin(theta)) * w + abs(math.cos(theta)) * h
    shrink = min(1.0, (width - 2) / ex, (height - 2) / ey)
    return w * shrink, h * shrink


def overlay_patterns(image: np.ndarray, points: Sequence[Instance], patterns: Dict[int, BasicPattern],
                     rng: np.random.Generator, nms_iou: float = PATTERN_NMS_IOU
                     ) -> Tuple[np.ndarray, List[SynthInstance]]:
    """Paste one recoloured pattern per labelled point.

    Candidates whose boxes overlap an earlier (randomly ranked) candidate with
    IoU >= `nms_iou` are dropped before blending.

    Raises:
        DataError: a point's category has no basic pattern.
    """
    image = _as_color_image(np.asarray(image, dtype=np.float64))
    height, width = image.shape[:2]
    if not points:
        return image.copy(), []

    sigma_base = rng.normal(0.0, RESIZE_STD)
    candidates: List[SynthInstance] = []
    for inst in points:
        if inst.category not in patterns:
            raise DataError(f"missing basic pattern for category {inst.category}")
        basic = patterns[inst.category]
        x, y = inst.center
        face, edge = extract_colors(image, PointLabel(x, y, inst.category))
        raster = basic.pattern[:, ::-1] if rng.random() < 0.5 else basic.pattern
        theta = float(rng.uniform(0.0, math.pi))
        w, h = random_resize(basic.w0, basic.h0, rng, sigma_base=sigma_base)
        w, h = _fit_inside(w, h, theta, width, height)
        w_px, h_px = max(int(round(w)), 2), max(int(round(h)), 2)

        ex = (abs(math.cos(theta)) * w_px + abs(math.sin(theta)) * h_px) / 2
        ey = (abs(math.sin(theta)) * w_px + abs(math.cos(theta)) * h_px) / 2
        cx = float(rng.uniform(ex, max(width - ex, ex)))
        cy = float(rng.uniform(ey, max(height - ey, ey)))

        resized = _resize_raster(np.ascontiguousarray(raster), w_px, h_px)
        candidates.append(SynthInstance(
            frame=RBox(cx, cy, float(w_px), float(h_px), theta),
            alpha=alpha_mask(w_px, h_px, rng),
            pixels=recolor(resized, face, edge),
            category=inst.category,
        ))

    keep = rbox_nms([c.box for c in candidates], rng.random(len(candidates)), nms_iou)
    kept = [candidates[i] for i in sorted(keep)]
    for inst in kept:
        image = paste_instance(image, inst)
    logging.debug(f"Pasted {len(kept)} of {len(candidates)} synthetic patterns")
    return image, kept


def make_basic_patterns(config: SceneConfig, exemplar_size: Tuple[int, int] = (32, 14)) -> Dict[int, BasicPattern]:
    """One gray-scale pattern per category, cropped from a rendered exemplar of its shape."""
    long_side, short_side = exemplar_size
    canvas = long_side + 6
    patterns: Dict[int, BasicPattern] = {}
    for category, _ in enumerate(config.class_names):
        family = config.family_of(category)
        short = long_side if family is ShapeFamily.DISC else short_side
        box = RBox(canvas / 2, canvas / 2, float(long_side), float(short), 0.0)
        mask = render_shape_mask(family, box, canvas, canvas)
        rows = np.flatnonzero(mask.max(1) > 0)
        cols = np.flatnonzero(mask.max(0) > 0)
        crop = mask[rows[0]:rows[-1] + 1, cols[0]:cols[-1] + 1]
        patterns[category] = BasicPattern(category, 0.05 + 0.9 * crop)
    return patterns
