"""Small convolutional backbone with an FPN neck producing P3-P7."""

from typing import List

import torch
from torch import nn
import torch.nn.functional as F

from utils.errors import DataError

STRIDES = (8, 16, 32, 64, 128)
SIZE_DIVISOR = STRIDES[-1]


def _conv(in_ch: int, out_ch: int, stride: int = 1) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(in_ch, out_ch, 3, stride=stride, padding=1, bias=False),
        nn.GroupNorm(min(8, out_ch), out_ch),
        nn.ReLU(inplace=True),
    )


def check_image_size(height: int, width: int) -> None:
    if height % SIZE_DIVISOR or width % SIZE_DIVISOR or height == 0 or width == 0:
        raise DataError(f"Image size {width}x{height} must be a positive multiple of {SIZE_DIVISOR}")


class TinyBackbone(nn.Module):
    """Stride-2 conv stages (C3-C5) with a top-down FPN and two extra stride-2 levels.

    Returns a list of five (B, C, H/s, W/s) maps for s in 8, 16, 32, 64, 128.
    """

    def __init__(self, in_channels: int = 3, channels: int = 32):
        super().__init__()
        self.channels = channels
        self.stem = nn.Sequential(_conv(in_channels, 16, stride=2), _conv(16, 24, stride=2))
        self.stage3 = nn.Sequential(_conv(24, 32, stride=2), _conv(32, 32))
        self.stage4 = nn.Sequential(_conv(32, 48, stride=2), _conv(48, 48))
        self.stage5 = nn.Sequential(_conv(48, 64, stride=2), _conv(64, 64))

        self.lateral = nn.ModuleList([nn.Conv2d(c, channels, 1) for c in (32, 48, 64)])
        self.output = nn.ModuleList([nn.Conv2d(channels, channels, 3, padding=1) for _ in range(3)])
        self.p6 = nn.Conv2d(channels, channels, 3, stride=2, padding=1)
        self.p7 = nn.Conv2d(channels, channels, 3, stride=2, padding=1)

    def forward(self, images: torch.Tensor) -> List[torch.Tensor]:
        check_image_size(images.shape[-2], images.shape[-1])
        c3 = self.stage3(self.stem(images))
        c4 = self.stage4(c3)
        c5 = self.stage5(c4)

        laterals = [conv(c) for conv, c in zip(self.lateral, (c3, c4, c5))]
        for idx in (1, 0):
            laterals[idx] = laterals[idx] + F.interpolate(laterals[idx + 1], size=laterals[idx].shape[-2:],
                                                          mode="nearest")
        p3, p4, p5 = [conv(x) for conv, x in zip(self.output, laterals)]
        p6 = self.p6(p5)
        p7 = self.p7(F.relu(p6))
        return [p3, p4, p5, p6, p7]


def level_points(height: int, width: int, strides=STRIDES, device=None, dtype=torch.float32):
    """Centres of every feature-map cell, level by level.

    Returns:
        points (L, 2) as (x, y), strides (L,), level index (L,) and the
        per-level (h, w) shapes.
    """
    points, stride_list, levels, shapes = [], [], [], []
    for level, stride in enumerate(strides):
        h, w = height // stride, width // stride
        ys = (torch.arange(h, device=device, dtype=dtype) + 0.5) * stride
        xs = (torch.arange(w, device=device, dtype=dtype) + 0.5) * stride
        gy, gx = torch.meshgrid(ys, xs, indexing="ij")
        points.append(torch.stack([gx.reshape(-1), gy.reshape(-1)], -1))
        stride_list.append(torch.full((h * w,), float(stride), device=device, dtype=dtype))
        levels.append(torch.full((h * w,), level, device=device, dtype=torch.long))
        shapes.append((h, w))
    return torch.cat(points), torch.cat(stride_list), torch.cat(levels), shapes
