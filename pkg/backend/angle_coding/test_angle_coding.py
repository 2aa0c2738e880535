import math

import numpy as np
import pytest
import torch

from angle_coding import angle_decode, angle_encode, bin2dec, scale_factor, smooth_l1, snap_loss
from utils.errors import UndefinedPhaseError


def _mod_pi_distance(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    d = torch.remainder(a - b, math.pi)
    return torch.minimum(d, math.pi - d)


def test_encode_zero_angle():
    np.testing.assert_allclose(angle_encode(0.0).numpy(), [1.0, -0.5, -0.5], atol=1e-15)


def test_encode_has_period_pi():
    theta = torch.linspace(-3, 3, 101, dtype=torch.float64)
    torch.testing.assert_close(angle_encode(theta), angle_encode(theta + math.pi), atol=1e-12, rtol=0)


def test_encode_direct_evaluation():
    code = angle_encode(math.pi / 8).numpy()
    expected = [math.cos(math.pi / 4 + 2 * math.pi * j / 3) for j in range(3)]
    np.testing.assert_allclose(code, expected, atol=1e-15)


def test_decode_roundtrip_on_grid():
    theta = torch.linspace(-math.pi / 2, math.pi / 2, 10_001, dtype=torch.float64)[:-1]
    decoded = angle_decode(angle_encode(theta))
    assert float(_mod_pi_distance(decoded, theta).max()) < 1e-6
    assert float(decoded.min()) >= -math.pi / 2
    assert float(decoded.max()) < math.pi / 2


def test_decode_examples():
    assert float(angle_decode(angle_encode(0.3))) == pytest.approx(0.3, abs=1e-12)
    assert float(angle_decode(angle_encode(-math.pi / 2))) == pytest.approx(-math.pi / 2, abs=1e-12)
    assert float(angle_decode(angle_encode(math.pi / 2))) == pytest.approx(-math.pi / 2, abs=1e-12)


def test_decode_noisy_code_stays_close():
    gen = torch.Generator().manual_seed(0)
    theta = torch.rand(1000, generator=gen, dtype=torch.float64) * math.pi - math.pi / 2
    for noise in (1e-4, 1e-3, 1e-2):
        code = angle_encode(theta) + noise * torch.randn(1000, 3, generator=gen, dtype=torch.float64)
        assert float(_mod_pi_distance(angle_decode(code), theta).max()) < 5 * noise


def test_decode_zero_code_raises():
    with pytest.raises(UndefinedPhaseError, match="undefined phase"):
        angle_decode(torch.zeros(3, dtype=torch.float64))


def test_smooth_l1_branches():
    assert float(smooth_l1(torch.tensor(0.5))) == pytest.approx(0.125)
    assert float(smooth_l1(torch.tensor(-2.0))) == pytest.approx(1.5)


def test_snap_loss_examples():
    for theta in (-1.2, 0.0, 0.3, 1.5):
        assert float(snap_loss(theta, theta)) == 0.0
        for k in (-2, -1, 1, 2):
            assert float(snap_loss(theta + k * math.pi, theta)) == pytest.approx(0.0, abs=1e-12)
    assert float(snap_loss(0.6, 0.1)) == pytest.approx(0.125, abs=1e-12)


def test_snap_loss_fold_boundary_resolves_positive():
    loss = snap_loss(torch.tensor(math.pi / 2, dtype=torch.float64), torch.tensor(0.0, dtype=torch.float64))
    assert float(loss) == pytest.approx(float(smooth_l1(torch.tensor(math.pi / 2))))


def test_snap_loss_properties():
    gen = torch.Generator().manual_seed(1)
    x = (torch.rand(500, generator=gen, dtype=torch.float64) - 0.5) * 10
    t = (torch.rand(500, generator=gen, dtype=torch.float64) - 0.5) * 10
    shift = (torch.rand(500, generator=gen, dtype=torch.float64) - 0.5) * 4
    base = snap_loss(x, t)
    torch.testing.assert_close(snap_loss(x + math.pi, t), base, atol=1e-12, rtol=0)
    torch.testing.assert_close(snap_loss(x + shift, t + shift), base, atol=1e-12, rtol=0)
    assert torch.all(base <= smooth_l1(x - t) + 1e-12)


def test_snap_disabled_is_plain_smooth_l1():
    assert float(snap_loss(math.pi + 0.1, 0.1, snap=False)) == pytest.approx(math.pi - 0.5)


def test_snap_loss_gradient_matches_finite_differences():
    gen = torch.Generator().manual_seed(2)
    for _ in range(100):
        target = torch.rand(1, generator=gen, dtype=torch.float64) * 2 - 1
        offset = torch.rand(1, generator=gen, dtype=torch.float64) * 2.8 - 1.4
        pred = (target + offset).requires_grad_(True)
        assert torch.autograd.gradcheck(lambda p: snap_loss(p, target), (pred,), eps=1e-6, atol=1e-8, rtol=1e-4)


def test_bin2dec_one_hot_levels():
    for n in range(1, 6):
        gates = torch.zeros(5, dtype=torch.float64)
        gates[n - 1] = 1.0
        assert float(bin2dec(gates)) == pytest.approx(n - 1, abs=1e-9)
        assert float(scale_factor(gates)) == pytest.approx(2 ** (n - 1), abs=1e-9)


def test_bin2dec_two_level_mix():
    y = float(bin2dec(torch.tensor([0.5, 0.5, 0.0, 0.0, 0.0], dtype=torch.float64)))
    # mean phasor of levels 1 and 2 points half way between them
    assert y == pytest.approx(0.5, abs=1e-12)
    assert 0 < y < 1


def test_bin2dec_uniform_gate_is_undefined():
    with pytest.raises(UndefinedPhaseError, match="undefined scale phase"):
        scale_factor(torch.full((5,), 0.2, dtype=torch.float64))


def test_bin2dec_along_channel_dim():
    gates = torch.softmax(torch.randn(2, 5, 3, 3, dtype=torch.float64), dim=1)
    y = bin2dec(gates, dim=1)
    assert y.shape == (2, 3, 3)
    torch.testing.assert_close(y[0, 1, 2], bin2dec(gates[0, :, 1, 2]))


def test_bin2dec_is_continuous_under_small_perturbations():
    gen = torch.Generator().manual_seed(3)
    for _ in range(200):
        logits = torch.randn(5, generator=gen, dtype=torch.float64) * 2
        gates = torch.softmax(logits, 0)
        y = float(bin2dec(gates))
        if not 0.2 < y < 4.8:
            continue
        nudged = torch.softmax(logits + 1e-6 * torch.randn(5, generator=gen, dtype=torch.float64), 0)
        assert abs(float(bin2dec(nudged)) - y) < 1e-3


def test_bin2dec_gradient_matches_finite_differences():
    gen = torch.Generator().manual_seed(4)
    checked = 0
    while checked < 100:
        gates = torch.softmax(torch.randn(5, generator=gen, dtype=torch.float64) * 2, 0)
        y = float(bin2dec(gates))
        if not 0.1 < y < 4.9:
            continue
        gates.requires_grad_(True)
        assert torch.autograd.gradcheck(bin2dec, (gates,), eps=1e-7, atol=1e-6, rtol=1e-4)
        checked += 1
