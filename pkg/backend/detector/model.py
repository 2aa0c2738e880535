"""The detector: backbone + dense head, with the optional point subnet alongside."""

from __future__ import annotations

import logging
from enum import Enum
from typing import List, Optional

import torch
from pydantic import BaseModel, Field, model_validator
from torch import nn

from dataio.annotations import Detection
from detector.backbone import SIZE_DIVISOR, TinyBackbone
from detector.dense_head import DenseHead, DensePrediction
from detector.point_subnet import PointPrediction, PointSubnet
from geometry.boxes import RBox, normalize_rboxes
from geometry.nms import rbox_nms
from utils.errors import ConfigError


class InferenceHead(str, Enum):
    DENSE = "dense"
    POINT = "point"


class ModelConfig(BaseModel):
    class_names: List[str] = Field(description="Category names; a category id is its index here")
    image_size: int = Field(default=128, description="Training canvas side in pixels")
    channels: int = Field(default=32, gt=0, description="Feature channels of the pyramid and heads")
    head_depth: int = Field(default=2, ge=0, description="Conv layers in each head tower")
    point_subnet: bool = Field(default=False, description="Build the point-to-box subnet next to the detector")
    fusion: bool = Field(default=True, description="Gated pyramid fusion and box scaling in the point subnet")
    rotation_agnostic: List[int] = Field(default_factory=list,
                                         description="Category ids whose angle is meaningless (forced to 0)")
    inference_head: InferenceHead = Field(default=InferenceHead.DENSE,
                                          description="Which head produces detections at inference")

    @model_validator(mode="after")
    def _check(self) -> "ModelConfig":
        if not self.class_names:
            raise ConfigError("ModelConfig needs at least one class")
        if self.image_size <= 0 or self.image_size % SIZE_DIVISOR:
            raise ConfigError(f"image_size must be a positive multiple of {SIZE_DIVISOR}, got {self.image_size}")
        bad = [c for c in self.rotation_agnostic if not 0 <= c < len(self.class_names)]
        if bad:
            raise ConfigError(f"rotation_agnostic refers to unknown class ids {bad}")
        if self.inference_head is InferenceHead.POINT and not self.point_subnet:
            raise ConfigError("inference_head='point' requires point_subnet=true")
        return self

    @property
    def num_classes(self) -> int:
        return len(self.class_names)


class WeakRBoxDetector(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.backbone = TinyBackbone(channels=config.channels)
        self.head = DenseHead(config.num_classes, channels=config.channels, depth=config.head_depth)
        self.point_subnet: Optional[PointSubnet] = None
        if config.point_subnet:
            self.point_subnet = PointSubnet(config.num_classes, channels=config.channels,
                                            fusion=config.fusion, depth=config.head_depth)
        agnostic = torch.zeros(config.num_classes, dtype=torch.bool)
        agnostic[list(config.rotation_agnostic)] = True
        self.register_buffer("agnostic", agnostic, persistent=False)

    def forward(self, images: torch.Tensor) -> DensePrediction:
        pyramid = self.backbone(images)
        return self.head(pyramid, (images.shape[-2], images.shape[-1]))

    def forward_points(self, images: torch.Tensor) -> PointPrediction:
        if self.point_subnet is None:
            raise ConfigError("This model was built without a point subnet")
        return self.point_subnet(images)

    def is_agnostic(self, categories: torch.Tensor) -> torch.Tensor:
        return self.agnostic.to(categories.device)[categories]

    @torch.no_grad()
    def detect(self, images: torch.Tensor, score_thresh: float = 0.05, nms_thresh: float = 0.1,
               max_per_image: int = 100) -> List[List[Detection]]:
        """Forward pass, score filtering and per-class rotated NMS for a batch."""
        if self.config.inference_head is InferenceHead.POINT:
            pred = self.forward_points(images)
            scores, boxes = torch.sigmoid(pred.cls_logits), pred.boxes
        else:
            pred = self.forward(images)
            scores = torch.sigmoid(pred.cls_logits) * torch.sigmoid(pred.centerness)[..., None]
            boxes = pred.boxes()
        return [self._postprocess(scores[b], boxes[b], score_thresh, nms_thresh, max_per_image)
                for b in range(images.shape[0])]

    def _postprocess(self, scores: torch.Tensor, boxes: torch.Tensor, score_thresh: float,
                     nms_thresh: float, max_per_image: int) -> List[Detection]:
        boxes = boxes.to(torch.float64)
        detections: List[Detection] = []
        for category in range(self.config.num_classes):
            cls_scores = scores[:, category].to(torch.float64)
            hit = torch.nonzero(cls_scores > score_thresh).reshape(-1)
            if hit.numel() == 0:
                continue
            cls_boxes = boxes[hit].clone()
            if self.agnostic[category]:
                cls_boxes[:, 4] = 0.0
            cls_boxes = normalize_rboxes(cls_boxes)
            valid = torch.isfinite(cls_boxes).all(-1) & (cls_boxes[:, 3] > 0)
            cls_boxes, hit = cls_boxes[valid], hit[valid]
            for idx in rbox_nms(cls_boxes, cls_scores[hit], nms_thresh):
                detections.append(Detection(RBox.from_tensor(cls_boxes[idx]), category, float(cls_scores[hit[idx]])))
        detections.sort(key=lambda d: -d.score)
        if len(detections) > max_per_image:
            logging.debug(f"Keeping {max_per_image} of {len(detections)} detections")
        return detections[:max_per_image]


def build_model(config: ModelConfig, seed: Optional[int] = None) -> WeakRBoxDetector:
    if seed is not None:
        torch.manual_seed(seed)
    model = WeakRBoxDetector(config)
    logging.info(f"Built detector with {sum(p.numel() for p in model.parameters())} parameters "
                 f"({config.num_classes} classes, point_subnet={config.point_subnet})")
    return model
