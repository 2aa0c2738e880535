"""Exact oriented-box geometry."""

from geometry.boxes import (
    HBox,
    PointLabel,
    RBox,
    as_rboxes,
    normalize_rboxes,
    r2h,
    rbox_corners,
    rbox_to_corners,
    rboxes_to_hboxes,
)
from geometry.min_area import min_area_rbox
from geometry.nms import rbox_nms
from geometry.overlaps import (
    circum_iou_loss,
    hbox_giou,
    pairwise_rotated_iou,
    project_to_orientation,
    rotated_iou,
    rotated_iou_loss,
)

__all__ = [
    "HBox", "PointLabel", "RBox", "as_rboxes", "normalize_rboxes", "r2h", "rbox_corners",
    "rbox_to_corners", "rboxes_to_hboxes", "min_area_rbox", "rbox_nms", "circum_iou_loss",
    "hbox_giou", "pairwise_rotated_iou", "project_to_orientation", "rotated_iou", "rotated_iou_loss",
]
