"""Annotation records shared by data generation, views, training and evaluation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Union

import torch

from geometry.boxes import HBox, PointLabel, RBox
from utils.errors import DataError


class LabelKind(str, Enum):
    """Annotation granularity of a single instance."""
    POINT = "point"
    HBOX = "hbox"
    RBOX = "rbox"


Label = Union[PointLabel, HBox, RBox]


def label_kind(label: Label) -> LabelKind:
    if isinstance(label, RBox):
        return LabelKind.RBOX
    if isinstance(label, HBox):
        return LabelKind.HBOX
    if isinstance(label, PointLabel):
        return LabelKind.POINT
    raise DataError(f"Unsupported label type: {type(label).__name__}")


def label_center(label: Label) -> tuple[float, float]:
    if isinstance(label, RBox):
        return label.cx, label.cy
    if isinstance(label, HBox):
        return label.center
    return label.x, label.y


@dataclass
class Instance:
    label: Label
    category: int
    difficult: bool = False

    @property
    def kind(self) -> LabelKind:
        return label_kind(self.label)

    @property
    def center(self) -> tuple[float, float]:
        return label_center(self.label)

    def as_rbox(self) -> Optional[RBox]:
        """Box form of the label: RBoxes as-is, HBoxes with theta = 0, points have none."""
        if isinstance(self.label, RBox):
            return self.label
        if isinstance(self.label, HBox):
            return self.label.to_rbox()
        return None

    def to_dict(self) -> Dict[str, Any]:
        if isinstance(self.label, PointLabel):
            values = [self.label.x, self.label.y]
        else:
            values = self.label.to_list()
        return {"kind": self.kind.value, "values": values, "category": self.category,
                "difficult": self.difficult}

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> "Instance":
        try:
            kind = LabelKind(payload["kind"])
            values = [float(v) for v in payload["values"]]
            category = int(payload["category"])
        except (KeyError, TypeError, ValueError) as e:
            raise DataError(f"Malformed instance record {payload!r}: {e}") from e

        expected = {LabelKind.POINT: 2, LabelKind.HBOX: 4, LabelKind.RBOX: 5}[kind]
        if len(values) != expected:
            raise DataError(f"{kind.value} label needs {expected} values, got {len(values)}")
        if kind is LabelKind.POINT:
            label: Label = PointLabel(values[0], values[1], category)
        elif kind is LabelKind.HBOX:
            label = HBox(*values)
        else:
            label = RBox(*values)
        return cls(label, category, bool(payload.get("difficult", False)))


@dataclass
class ImageAnnotations:
    """All instances of one image plus the canvas size they live on."""
    image_id: str
    width: int
    height: int
    instances: List[Instance] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.instances)

    @property
    def categories(self) -> torch.Tensor:
        return torch.tensor([inst.category for inst in self.instances], dtype=torch.long)

    @property
    def centers(self) -> torch.Tensor:
        return torch.tensor([inst.center for inst in self.instances], dtype=torch.float64).reshape(-1, 2)

    def rbox_tensor(self) -> torch.Tensor:
        """(N, 5) boxes; point instances get NaN rows so indices stay aligned."""
        rows = []
        for inst in self.instances:
            box = inst.as_rbox()
            rows.append(box.to_list() if box is not None else [float("nan")] * 5)
        return torch.tensor(rows, dtype=torch.float64).reshape(-1, 5)

    def kinds(self) -> List[LabelKind]:
        return [inst.kind for inst in self.instances]

    def to_dict(self) -> Dict[str, Any]:
        return {"image_id": self.image_id, "width": self.width, "height": self.height,
                "instances": [inst.to_dict() for inst in self.instances]}

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> "ImageAnnotations":
        return cls(str(payload["image_id"]), int(payload["width"]), int(payload["height"]),
                   [Instance.from_dict(p) for p in payload.get("instances", [])])


@dataclass
class AnnotationSet:
    """A split: the declared class list and per-image annotations."""
    classes: List[str]
    images: List[ImageAnnotations] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.images)

    def __iter__(self):
        return iter(self.images)

    def class_index(self, name: str) -> int:
        try:
            return self.classes.index(name)
        except ValueError:
            raise DataError(f"Unknown class '{name}'; declared classes are {self.classes}") from None

    def by_id(self) -> Dict[str, ImageAnnotations]:
        return {img.image_id: img for img in self.images}

    def num_instances(self) -> int:
        return sum(len(img) for img in self.images)

    def to_dict(self) -> Dict[str, Any]:
        return {"classes": list(self.classes), "images": [img.to_dict() for img in self.images]}

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> "AnnotationSet":
        if "classes" not in payload:
            raise DataError("Annotation document has no 'classes' list")
        images = [ImageAnnotations.from_dict(p) for p in payload.get("images", [])]
        annotations = cls(list(payload["classes"]), images)
        for img in images:
            for inst in img.instances:
                if not 0 <= inst.category < len(annotations.classes):
                    raise DataError(f"Unknown class id {inst.category} in image '{img.image_id}'")
        return annotations


@dataclass
class Detection:
    """One predicted object."""
    box: RBox
    category: int
    score: float

    def __post_init__(self):
        if not math.isfinite(self.score):
            raise DataError(f"Detection score must be finite, got {self.score}")
