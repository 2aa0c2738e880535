from detector.assigners import (
    AssignmentResult,
    GroundTruth,
    assign_fcos,
    assign_points_nearest,
    assign_score_based,
    object_boxes,
    pair_views,
    paired_objects,
)
from detector.backbone import STRIDES, TinyBackbone, level_points
from detector.checkpoint import Checkpoint, load_checkpoint, load_model, save_checkpoint
from detector.dense_head import DenseHead, DensePrediction, decode_ltrb, encode_ltrb
from detector.model import InferenceHead, ModelConfig, WeakRBoxDetector, build_model
from detector.point_subnet import PointPrediction, PointSubnet

__all__ = [
    "AssignmentResult", "GroundTruth", "assign_fcos", "assign_points_nearest", "assign_score_based",
    "object_boxes", "pair_views", "paired_objects", "STRIDES", "TinyBackbone", "level_points", "Checkpoint",
    "load_checkpoint", "load_model", "save_checkpoint", "DenseHead", "DensePrediction", "decode_ltrb",
    "encode_ltrb", "InferenceHead", "ModelConfig", "WeakRBoxDetector", "build_model", "PointPrediction",
    "PointSubnet",
]
