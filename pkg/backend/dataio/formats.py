"""Reading and writing annotation and detection files.

Two annotation formats are supported:

* ``dota_txt``: a directory with one text file per image. Object lines are
  ``x1 y1 x2 y2 x3 y3 x4 y4 class [difficult]``; lines of the form
  ``key:value`` (``imagesource:``, ``gsd:``, ``imagesize:W H``) are metadata.
  Quadrilaterals are turned into RBoxes by their minimum-area rectangle.
* ``internal``: a single JSON document per split that keeps every label's kind
  (point, hbox, rbox) explicitly.

Detections are written the DOTA Task1 way: one file per class with lines
``image score x1 y1 x2 y2 x3 y3 x4 y4``.
"""

from __future__ import annotations

import json
import logging
from enum import Enum
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Union

from dataio.annotations import AnnotationSet, Detection, ImageAnnotations, Instance
from geometry.boxes import RBox, rbox_to_corners
from geometry.min_area import min_area_rbox
from utils.errors import DataError

DEFAULT_IMAGE_SIZE = (128, 128)
DETECTION_PREFIX = "Task1_"

PathLike = Union[str, Path]


class AnnotationFormat(str, Enum):
    DOTA_TXT = "dota_txt"
    INTERNAL = "internal"


def _quad_text(box: RBox) -> str:
    return " ".join(f"{v:.9f}" for v in rbox_to_corners(box).reshape(-1))


def parse_dota_lines(lines: Sequence[str], classes: List[str], image_id: str,
                     source: str = "<memory>") -> ImageAnnotations:
    """Parse one image's DOTA lines.

    Raises:
        DataError: malformed line (reported with its 1-based number) or a class
            missing from `classes`.
    """
    width, height = DEFAULT_IMAGE_SIZE
    instances: List[Instance] = []
    for number, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line:
            continue
        tokens = line.split()
        if ":" in tokens[0] and len(tokens) < 9:
            key, _, value = line.partition(":")
            if key.strip() == "imagesize":
                try:
                    width, height = (int(v) for v in value.split())
                except ValueError as e:
                    raise DataError(f"{source}:{number}: bad imagesize '{value.strip()}'") from e
            continue
        if len(tokens) not in (9, 10):
            raise DataError(f"{source}:{number}: expected 8 coordinates, a class and an optional "
                            f"difficulty flag, got {len(tokens)} fields")
        try:
            coords = [float(v) for v in tokens[:8]]
            difficult = bool(int(tokens[9])) if len(tokens) == 10 else False
        except ValueError as e:
            raise DataError(f"{source}:{number}: {e}") from e
        name = tokens[8]
        if name not in classes:
            raise DataError(f"{source}:{number}: unknown class '{name}' (declared: {', '.join(classes)})")
        try:
            box = quad_to_rbox(coords)
        except DataError as e:
            raise DataError(f"{source}:{number}: {e}") from e
        instances.append(Instance(box, classes.index(name), difficult))
    return ImageAnnotations(image_id, width, height, instances)


def _scan_dota_classes(files: Sequence[Path]) -> List[str]:
    names = set()
    for file in files:
        for line in file.read_text().splitlines():
            tokens = line.split()
            if len(tokens) in (9, 10) and ":" not in tokens[0]:
                names.add(tokens[8])
    return sorted(names)


def load_annotations(path: PathLike, fmt: Union[AnnotationFormat, str] = AnnotationFormat.INTERNAL,
                     classes: Optional[List[str]] = None) -> AnnotationSet:
    """Load a split.

    Args:
        path: a JSON file (internal) or a directory / single ``.txt`` file (dota_txt).
        classes: declared class list for dota_txt; when omitted the sorted set
            of names found in the files is used.
    """
    path = Path(path)
    fmt = AnnotationFormat(fmt)
    if not path.exists():
        raise DataError(f"Annotation path {path} does not exist")

    if fmt is AnnotationFormat.INTERNAL:
        try:
            payload = json.loads(path.read_text())
        except json.JSONDecodeError as e:
            raise DataError(f"{path}: not a valid annotation document ({e})") from e
        return AnnotationSet.from_dict(payload)

    files = sorted(path.glob("*.txt")) if path.is_dir() else [path]
    if classes is None:
        classes = _scan_dota_classes(files)
    annotations = AnnotationSet(list(classes))
    for file in files:
        annotations.images.append(parse_dota_lines(file.read_text().splitlines(), annotations.classes,
                                                    file.stem, source=str(file)))
    logging.info(f"Loaded {annotations.num_instances()} objects in {len(annotations)} images from {path}")
    return annotations


def save_annotations(annotations: AnnotationSet, path: PathLike,
                     fmt: Union[AnnotationFormat, str] = AnnotationFormat.INTERNAL) -> Path:
    """Write a split; dota_txt needs box labels since points have no polygon."""
    path = Path(path)
    fmt = AnnotationFormat(fmt)
    if fmt is AnnotationFormat.INTERNAL:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(annotations.to_dict(), indent=1))
        return path

    path.mkdir(parents=True, exist_ok=True)
    for image in annotations:
        lines = [f"imagesize:{image.width} {image.height}"]
        for inst in image.instances:
            box = inst.as_rbox()
            if box is None:
                raise DataError(f"Image '{image.image_id}': point labels cannot be written as DOTA polygons")
            lines.append(f"{_quad_text(box)} {annotations.classes[inst.category]} {int(inst.difficult)}")
        (path / f"{image.image_id}.txt").write_text("\n".join(lines) + "\n")
    return path


def write_detections(detections: Mapping[str, Sequence[Detection]], classes: List[str],
                     out_dir: PathLike) -> List[Path]:
    """One ``Task1_<class>.txt`` file per class with ``image score x1 y1 ... y4`` lines."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    per_class: Dict[int, List[str]] = {c: [] for c in range(len(classes))}
    for image_id, dets in detections.items():
        for det in dets:
            per_class[det.category].append(f"{image_id} {det.score:.6f} {_quad_text(det.box)}")
    written = []
    for category, lines in per_class.items():
        file = out_dir / f"{DETECTION_PREFIX}{classes[category]}.txt"
        file.write_text("\n".join(lines) + ("\n" if lines else ""))
        written.append(file)
    return written


def read_detections(out_dir: PathLike, classes: List[str]) -> Dict[str, List[Detection]]:
    out_dir = Path(out_dir)
    detections: Dict[str, List[Detection]] = {}
    for category, name in enumerate(classes):
        file = out_dir / f"{DETECTION_PREFIX}{name}.txt"
        if not file.exists():
            logging.warning(f"No detection file for class '{name}' in {out_dir}")
            continue
        for number, line in enumerate(file.read_text().splitlines(), start=1):
            tokens = line.split()
            if not tokens:
                continue
            if len(tokens) != 10:
                raise DataError(f"{file}:{number}: expected 'image score x1 y1 ... y4', got {len(tokens)} fields")
            try:
                score = float(tokens[1])
                coords = [float(v) for v in tokens[2:]]
            except ValueError as e:
                raise DataError(f"{file}:{number}: {e}") from e
            try:
                box = quad_to_rbox(coords)
            except DataError as e:
                raise DataError(f"{file}:{number}: {e}") from e
            detections.setdefault(tokens[0], []).append(Detection(box, category, score))
    return detections


def quad_to_rbox(coords: Sequence[float]) -> RBox:
    if len(coords) != 8:
        raise DataError(f"A quadrilateral needs 8 coordinates, got {len(coords)}")
    return min_area_rbox([coords[i:i + 2] for i in range(0, 8, 2)])

