from __future__ import annotations

import logging
from enum import Enum
from typing import Dict, Mapping, Tuple, Union

import torch
from pydantic import BaseModel, Field

from losses.consistency import LossTerm


class LossMode(str, Enum):
    """How loss parts are combined into the training objective."""
    HBOX_CONSISTENCY = "hbox_consistency"
    POINT_SYNTHESIS = "point_synthesis"
    UNIFIED = "unified"
    POINT_SUBNET = "point_subnet"


class LossWeights(BaseModel):
    lambda_flip: float = Field(default=0.05, ge=0.0, description="Flip loss weight in hbox_consistency mode")
    mu_cn: float = Field(default=1.0, ge=0.0, description="Centerness loss weight")
    mu_box: float = Field(default=1.0, ge=0.0, description="Box loss weight")
    mu_ss: float = Field(default=1.0, ge=0.0, description="Weight of the whole consistency branch")
    mu_flp: float = Field(default=1.0, ge=0.0, description="Flip loss weight in unified / point modes")
    mu_sca: float = Field(default=1.0, ge=0.0, description="Scale loss weight in point_synthesis mode")


REQUIRED_PARTS: Dict[LossMode, Tuple[str, ...]] = {
    LossMode.HBOX_CONSISTENCY: ("cls", "cn", "box", "rot", "flp"),
    LossMode.UNIFIED: ("cls", "cn", "box", "rot", "flp"),
    LossMode.POINT_SYNTHESIS: ("cls", "box", "rot", "flp", "sca"),
    LossMode.POINT_SUBNET: ("cls", "box"),
}

Part = Union[torch.Tensor, LossTerm, float]


def _value(part: Part) -> torch.Tensor:
    if isinstance(part, LossTerm):
        return part.value
    if isinstance(part, torch.Tensor):
        return part
    return torch.as_tensor(float(part))


def consistency_loss(parts: Mapping[str, Part], mode: LossMode, w: LossWeights) -> torch.Tensor:
    """The self-supervised branch L_ss for one mode (zero for `point_subnet`)."""
    mode = LossMode(mode)
    if mode is LossMode.POINT_SUBNET:
        return torch.zeros(())
    rot, flp = _value(parts["rot"]), _value(parts["flp"])
    if mode is LossMode.HBOX_CONSISTENCY:
        return rot + w.lambda_flip * flp
    ss = rot + w.mu_flp * flp
    if mode is LossMode.POINT_SYNTHESIS:
        ss = ss + w.mu_sca * _value(parts["sca"])
    return ss


def total_loss(parts: Mapping[str, Part], mode: LossMode, w: LossWeights) -> torch.Tensor:
    """Weighted sum of loss parts.

    Parts are keyed "cls", "cn", "box", "rot", "flp" and "sca". Consistency
    parts for views not sampled in a step are passed as zero terms; only the
    composition itself decides what is required.

    Raises:
        ValueError: a part the mode needs is missing.
    """
    mode = LossMode(mode)
    missing = [name for name in REQUIRED_PARTS[mode] if name not in parts]
    if missing:
        logging.error(f"Loss parts {missing} missing for mode {mode.value}; got {sorted(parts)}")
        raise ValueError(f"missing loss part(s) {missing} for mode '{mode.value}'")

    total = _value(parts["cls"]) + w.mu_box * _value(parts["box"])
    if mode is LossMode.POINT_SUBNET:
        return total
    if "cn" in parts:
        total = total + w.mu_cn * _value(parts["cn"])
    return total + w.mu_ss * consistency_loss(parts, mode, w)
