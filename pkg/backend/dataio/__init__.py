from dataio.annotations import AnnotationSet, Detection, ImageAnnotations, Instance, LabelKind
from dataio.evaluation import APReport, average_precision, eval_ap, eval_ap50, eval_summary
from dataio.formats import (
    AnnotationFormat,
    load_annotations,
    read_detections,
    save_annotations,
    write_detections,
)
from dataio.images import load_image, save_image
from dataio.protocols import degrade, inject_noise, mix_labels

__all__ = [
    "AnnotationSet", "Detection", "ImageAnnotations", "Instance", "LabelKind", "APReport",
    "average_precision", "eval_ap", "eval_ap50", "eval_summary", "AnnotationFormat", "load_annotations",
    "read_detections", "save_annotations", "write_detections", "load_image", "save_image", "degrade",
    "inject_noise", "mix_labels",
]
