"""Label degradation, label noise and mixed-granularity label sets.

These build the weak-supervision datasets from exact RBox annotations:
boxes become their circumscribed HBoxes or their centre points, and HBoxes /
points can be perturbed the way coarse human labels are.
"""

from __future__ import annotations

import logging
import math
from typing import Mapping, Optional, Union

import numpy as np

from dataio.annotations import AnnotationSet, ImageAnnotations, Instance, LabelKind
from geometry.boxes import HBox, PointLabel, RBox, r2h
from utils.errors import ConfigError, DataError


def degrade_instance(inst: Instance, target: Union[LabelKind, str]) -> Instance:
    """Coarsen one label; coarsening to the same or a finer kind than available is refused."""
    target = LabelKind(target)
    label = inst.label
    if target is LabelKind.RBOX:
        if isinstance(label, RBox):
            return inst
        raise DataError(f"Cannot recover an RBox from a {inst.kind.value} label")
    if target is LabelKind.HBOX:
        if isinstance(label, RBox):
            return Instance(r2h(label), inst.category, inst.difficult)
        if isinstance(label, HBox):
            return inst
        raise DataError("Cannot turn a point label into an HBox")
    x, y = inst.center
    return Instance(PointLabel(x, y, inst.category), inst.category, inst.difficult)


def _map_images(annotations: AnnotationSet, fn) -> AnnotationSet:
    images = [ImageAnnotations(img.image_id, img.width, img.height, [fn(img, i, inst)
                                                                     for i, inst in enumerate(img.instances)])
              for img in annotations]
    return AnnotationSet(list(annotations.classes), images)


def degrade(annotations: AnnotationSet, target: Union[LabelKind, str]) -> AnnotationSet:
    """Replace every label by its circumscribed HBox (``hbox``) or centre (``point``)."""
    target = LabelKind(target)
    if target is LabelKind.RBOX:
        raise DataError("degrade target must be 'hbox' or 'point'")
    return _map_images(annotations, lambda _img, _i, inst: degrade_instance(inst, target))


def _object_height(inst: Instance) -> float:
    box = inst.as_rbox()
    if box is None:
        raise DataError("Point noise needs the object's box height; pass the box annotations as `reference`")
    return box.h


def inject_noise(annotations: AnnotationSet, sigma: float, rng: np.random.Generator,
                 reference: Optional[AnnotationSet] = None) -> AnnotationSet:
    """Perturb coarse labels.

    HBox widths and heights are scaled independently by U(1 - sigma, 1 + sigma)
    about the box centre. Point coordinates are shifted by U(-sigma H, sigma H)
    where H is the height of the object's box, taken from `reference` (the
    box annotations the points were derived from).

    Raises:
        DataError: an RBox label (noise is defined for HBoxes and points only),
            or a point without a reference box.
        ConfigError: sigma outside [0, 1).
    """
    if not 0.0 <= sigma < 1.0:
        raise ConfigError(f"Noise level must be in [0, 1), got {sigma}")
    ref_images = reference.by_id() if reference is not None else {}

    def perturb(img: ImageAnnotations, idx: int, inst: Instance) -> Instance:
        label = inst.label
        if isinstance(label, RBox):
            raise DataError(f"Image '{img.image_id}': noise is only defined for HBox and point labels")
        if sigma == 0.0:
            return inst
        if isinstance(label, HBox):
            cx, cy = label.center
            w = label.width * rng.uniform(1 - sigma, 1 + sigma)
            h = label.height * rng.uniform(1 - sigma, 1 + sigma)
            return Instance(HBox(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2), inst.category, inst.difficult)
        source = ref_images.get(img.image_id)
        if source is None or idx >= len(source.instances):
            raise DataError(f"Image '{img.image_id}': no reference box for point {idx}")
        height = _object_height(source.instances[idx])
        dx, dy = rng.uniform(-sigma * height, sigma * height, size=2)
        return Instance(PointLabel(label.x + dx, label.y + dy, inst.category), inst.category, inst.difficult)

    noisy = _map_images(annotations, perturb)
    logging.info(f"Injected sigma={sigma} noise into {noisy.num_instances()} labels")
    return noisy


def mix_labels(annotations: AnnotationSet, proportions: Mapping[Union[LabelKind, str], float],
               rng: np.random.Generator) -> AnnotationSet:
    """Give every RBox instance a random label kind drawn with `proportions`.

    Example: ``{"point": 0.7, "hbox": 0.3}``.
    """
    kinds = [LabelKind(k) for k in proportions]
    probs = np.array([float(v) for v in proportions.values()])
    if (probs < 0).any() or not math.isclose(probs.sum(), 1.0, abs_tol=1e-6):
        raise ConfigError(f"Label proportions must be non-negative and sum to 1, got {dict(proportions)}")
    probs = probs / probs.sum()
    return _map_images(annotations,
                       lambda _img, _i, inst: degrade_instance(inst, kinds[rng.choice(len(kinds), p=probs)]))
