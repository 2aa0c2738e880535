"""Single-level point-to-box subnet with gated pyramid fusion and gate-driven box scaling.

All pyramid levels are upsampled to stride 8 and mixed with per-pixel softmax
gates. The gates are also read as a continuous level index Y (see
`angle_coding.bin2dec`), and predicted sizes are multiplied by m = 2 ** Y, so
one feature map can emit both small and large boxes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

import torch
from torch import nn
import torch.nn.functional as F

from angle_coding.gate_decoder import scale_factor
from angle_coding.phase_coder import N_ENC, decode_predicted
from detector.backbone import STRIDES, TinyBackbone
from detector.dense_head import PRIOR_PROB, _tower

FUSED_STRIDE = STRIDES[0]


@dataclass
class PointPrediction:
    cls_logits: torch.Tensor  # (B, L, K)
    boxes: torch.Tensor  # (B, L, 5)
    raw_sizes: torch.Tensor  # (B, L, 2) sizes before scaling by m
    scale: torch.Tensor  # (B, L) m
    gates: torch.Tensor  # (B, L, N)
    angle_code: torch.Tensor  # (B, L, N_ENC)
    points: torch.Tensor  # (L, 2)


class PointSubnet(nn.Module):
    def __init__(self, num_classes: int, channels: int = 32, fusion: bool = True, depth: int = 2):
        super().__init__()
        self.num_classes = num_classes
        self.fusion = fusion
        self.num_levels = len(STRIDES)
        self.backbone = TinyBackbone(channels=channels)
        # one gate conv shared by all levels, plus a learned per-level offset
        self.gate_conv = nn.Conv2d(channels, 1, 3, padding=1)
        nn.init.zeros_(self.gate_conv.bias)
        # Starts towards fine levels. Level phasors wrap around: a little level-5 mass on a
        # P3-dominated gate moves Y from about 0 to about N, i.e. m from 1 to about 2 ** N.
        # A uniform gate has no defined phase at all.
        self.gate_bias = nn.Parameter(-0.5 * torch.arange(self.num_levels, dtype=torch.float32))
        self.cls_tower = _tower(channels, depth)
        self.reg_tower = _tower(channels, depth)
        self.cls_logits = nn.Conv2d(channels, num_classes, 3, padding=1)
        self.offset_pred = nn.Conv2d(channels, 2, 3, padding=1)
        self.size_pred = nn.Conv2d(channels, 2, 3, padding=1)
        self.angle_pred = nn.Conv2d(channels, N_ENC, 3, padding=1)
        nn.init.constant_(self.cls_logits.bias, -math.log((1 - PRIOR_PROB) / PRIOR_PROB))

    def fuse_fpn(self, pyramid: List[torch.Tensor]) -> Tuple[torch.Tensor, torch.Tensor]:
        """Gate-weighted sum of all levels at stride 8.

        Returns:
            F (B, C, H/8, W/8) and the gates G (B, N, H/8, W/8), summing to one per pixel.
        """
        size = pyramid[0].shape[-2:]
        upsampled = [feat if feat.shape[-2:] == size else F.interpolate(feat, size=size, mode="nearest")
                     for feat in pyramid]
        if self.fusion:
            logits = torch.cat([self.gate_conv(feat) for feat in upsampled], 1) + self.gate_bias.view(1, -1, 1, 1)
            gates = torch.softmax(logits, dim=1)
        else:
            gates = torch.zeros(pyramid[0].shape[0], self.num_levels, *size, dtype=pyramid[0].dtype,
                                device=pyramid[0].device)
            gates[:, 0] = 1.0
        fused = sum(gates[:, n:n + 1] * feat for n, feat in enumerate(upsampled))
        return fused, gates

    def predict(self, fused: torch.Tensor, gates: torch.Tensor) -> PointPrediction:
        batch, _, h, w = fused.shape
        cls_feat = self.cls_tower(fused)
        reg_feat = self.reg_tower(fused)

        ys = (torch.arange(h, device=fused.device, dtype=fused.dtype) + 0.5) * FUSED_STRIDE
        xs = (torch.arange(w, device=fused.device, dtype=fused.dtype) + 0.5) * FUSED_STRIDE
        gy, gx = torch.meshgrid(ys, xs, indexing="ij")
        points = torch.stack([gx.reshape(-1), gy.reshape(-1)], -1)

        def flat(x: torch.Tensor) -> torch.Tensor:
            return x.flatten(2).transpose(1, 2)

        gates_flat = flat(gates)
        if self.fusion:
            m = scale_factor(gates_flat, dim=-1)
        else:
            m = torch.ones(batch, h * w, dtype=fused.dtype, device=fused.device)
        raw_sizes = torch.exp(flat(self.size_pred(reg_feat)).clamp(max=6.0)) * FUSED_STRIDE
        sizes = raw_sizes * m[..., None]
        centers = points + flat(self.offset_pred(reg_feat)) * FUSED_STRIDE
        code = flat(self.angle_pred(reg_feat))
        boxes = torch.cat([centers, sizes, decode_predicted(code)[..., None]], -1)
        return PointPrediction(flat(self.cls_logits(cls_feat)), boxes, raw_sizes, m, gates_flat, code, points)

    def forward(self, images: torch.Tensor, gates: Optional[torch.Tensor] = None) -> PointPrediction:
        fused, learned = self.fuse_fpn(self.backbone(images))
        return self.predict(fused, learned if gates is None else gates)
