"""Phase-shifting angle coder and the periodic snap loss.

An orientation theta is stored as N_ENC cosines of 2*theta shifted by equal
phase steps. The code has period pi, so a box and the same box turned by pi
share one target and the long-edge boundary causes no jump.
"""

import math

import torch

from utils.errors import UndefinedPhaseError

N_ENC = 3
PHASE_EPS = 1e-12
HALF_PI = math.pi / 2


def _as_angle_tensor(theta) -> torch.Tensor:
    if isinstance(theta, torch.Tensor):
        return theta
    return torch.as_tensor(theta, dtype=torch.float64)


def _phase_shifts(n_enc: int, like: torch.Tensor) -> torch.Tensor:
    return 2 * math.pi * torch.arange(n_enc, dtype=like.dtype, device=like.device) / n_enc


def wrap_half_pi(theta: torch.Tensor) -> torch.Tensor:
    """Fold angles into [-pi/2, pi/2)."""
    return torch.remainder(theta + HALF_PI, math.pi) - HALF_PI


def angle_encode(theta, n_enc: int = N_ENC) -> torch.Tensor:
    """(...) angles -> (..., n_enc) code with c_j = cos(2 theta + 2 pi j / n_enc)."""
    theta = _as_angle_tensor(theta)
    return torch.cos(2 * theta[..., None] + _phase_shifts(n_enc, theta))


def _phasor(code: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    shifts = _phase_shifts(code.shape[-1], code)
    return (code * torch.cos(shifts)).sum(-1), -(code * torch.sin(shifts)).sum(-1)


def angle_decode(code, eps: float = PHASE_EPS) -> torch.Tensor:
    """Least-squares phase recovery; exact on clean codes.

    Raises:
        UndefinedPhaseError: a code whose phasor sum vanishes (e.g. all zeros).
    """
    cos_part, sin_part = _phasor(_as_angle_tensor(code))
    if torch.any(torch.hypot(cos_part, sin_part) < eps):
        raise UndefinedPhaseError("undefined phase: angle code has no dominant direction")
    return wrap_half_pi(0.5 * torch.atan2(sin_part, cos_part))


def decode_predicted(code: torch.Tensor, eps: float = 1e-6) -> torch.Tensor:
    """Decode network outputs without raising; a vanishing phasor is nudged to angle 0."""
    cos_part, sin_part = _phasor(code)
    return wrap_half_pi(0.5 * torch.atan2(sin_part, cos_part + eps))


def smooth_l1(diff: torch.Tensor, beta: float = 1.0) -> torch.Tensor:
    absolute = diff.abs()
    return torch.where(absolute < beta, 0.5 * diff ** 2 / beta, absolute - 0.5 * beta)


def fold_difference(diff: torch.Tensor) -> torch.Tensor:
    """Map an angle difference into (-pi/2, pi/2]; exactly pi/2 stays positive."""
    return HALF_PI - torch.remainder(HALF_PI - diff, math.pi)


def snap_loss(theta_pred, theta_target, snap: bool = True, beta: float = 1.0) -> torch.Tensor:
    """min over k of smooth-L1(theta_pred, theta_target + k pi), elementwise.

    With `snap=False` the plain smooth-L1 of the raw difference is returned,
    which is what the periodic loss is compared against in ablations.
    """
    diff = _as_angle_tensor(theta_pred) - _as_angle_tensor(theta_target)
    if snap:
        diff = fold_difference(diff)
    return smooth_l1(diff, beta)
