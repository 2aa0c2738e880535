"""PNG image I/O and detection overlays (Pillow)."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence, Union

import numpy as np
from PIL import Image, ImageDraw

from dataio.annotations import Detection
from geometry.boxes import rbox_to_corners
from utils.errors import DataError

OVERLAY_COLORS = ((230, 25, 75), (60, 180, 75), (255, 225, 25), (0, 130, 200), (245, 130, 48), (145, 30, 180))


def load_image(path: Union[str, Path]) -> np.ndarray:
    """(H, W, 3) float64 image in [0, 1]."""
    path = Path(path)
    try:
        with Image.open(path) as img:
            array = np.asarray(img.convert("RGB"), dtype=np.float64)
    except (FileNotFoundError, OSError) as e:
        raise DataError(f"Cannot read image {path}: {e}") from e
    return array / 255.0


def to_uint8(image: np.ndarray) -> np.ndarray:
    return (np.clip(image, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def save_image(path: Union[str, Path], image: np.ndarray) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_uint8(image)).save(path)
    return path


def draw_detections(image: np.ndarray, detections: Sequence[Detection], width: int = 1) -> Image.Image:
    """Outline each detection's RBox on a copy of the image, coloured by class."""
    canvas = Image.fromarray(to_uint8(image)).convert("RGB")
    draw = ImageDraw.Draw(canvas)
    for det in detections:
        corners = [tuple(map(float, c)) for c in rbox_to_corners(det.box)]
        draw.polygon(corners, outline=OVERLAY_COLORS[det.category % len(OVERLAY_COLORS)], width=width)
    return canvas
