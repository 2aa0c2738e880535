import math

import torch

from angle_coding.phase_coder import PHASE_EPS
from utils.errors import UndefinedPhaseError


def bin2dec(gates, dim: int = -1, eps: float = PHASE_EPS) -> torch.Tensor:
    """Continuous level index Y in [0, N) from a softmax gate vector.

    Level n (1-based) contributes a unit phasor at angle 2 pi (n-1) / N
    weighted by its gate; the argument of the sum, read back on [0, 2 pi),
    gives Y. A one-hot gate at level n returns n - 1.

    Raises:
        UndefinedPhaseError: the weighted phasor sum has (near) zero length,
            e.g. for a uniform gate.
    """
    gates = gates if isinstance(gates, torch.Tensor) else torch.as_tensor(gates, dtype=torch.float64)
    gates = gates.movedim(dim, -1)
    levels = gates.shape[-1]
    angles = 2 * math.pi * torch.arange(levels, dtype=gates.dtype, device=gates.device) / levels
    sin_sum = (gates * torch.sin(angles)).sum(-1)
    cos_sum = (gates * torch.cos(angles)).sum(-1)
    if torch.any(torch.hypot(sin_sum, cos_sum) < eps):
        raise UndefinedPhaseError("undefined scale phase: gate phasors cancel out")
    y = levels / (2 * math.pi) * (math.pi - torch.atan2(sin_sum, -cos_sum))
    return torch.remainder(y, levels)


def scale_factor(gates, dim: int = -1) -> torch.Tensor:
    """m = 2 ** bin2dec(gates), in [1, 2 ** N)."""
    return torch.pow(2.0, bin2dec(gates, dim=dim))
