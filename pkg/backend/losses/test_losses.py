import math

import pytest
import torch
import torch.nn.functional as F

from angle_coding import snap_loss
from dataio.annotations import LabelKind
from geometry import RBox
from losses import (
    LossMode,
    LossTerm,
    LossWeights,
    PairedAngles,
    centerness_target,
    loss_box_ws,
    loss_cls,
    loss_cn,
    loss_flp,
    loss_rot,
    loss_sca,
    total_loss,
)


def _pairs(theta, theta_view) -> PairedAngles:
    return PairedAngles(torch.tensor(theta, dtype=torch.float64), torch.tensor(theta_view, dtype=torch.float64))


def test_flip_loss_examples():
    assert float(loss_flp(_pairs([0.3, -1.0], [-0.3, 1.0])).value) == pytest.approx(0.0, abs=1e-12)
    assert float(loss_flp(_pairs([0.3], [-0.3 + math.pi])).value) == pytest.approx(0.0, abs=1e-12)
    expected = float(snap_loss(torch.tensor(0.6), torch.tensor(0.0)))
    assert float(loss_flp(_pairs([0.3], [0.3])).value) == pytest.approx(expected, rel=1e-6)


def test_rotation_loss_examples():
    rotation = 0.9
    assert float(loss_rot(_pairs([0.2, -0.7], [0.2 + rotation, -0.7 + rotation]), rotation).value) == \
        pytest.approx(0.0, abs=1e-12)
    assert float(loss_rot(_pairs([0.2], [0.2 + rotation - math.pi]), rotation).value) == pytest.approx(0.0, abs=1e-12)
    # difference of exactly -pi/2 folds onto +pi/2
    boundary = float(loss_rot(_pairs([0.4], [0.4]), math.pi / 2).value)
    assert boundary == pytest.approx(math.pi / 2 - 0.5, abs=1e-12)


def test_empty_pairs_flagged():
    term = loss_rot(PairedAngles.empty(), 0.5)
    assert term.no_pairs and float(term.value) == 0.0
    assert loss_flp(PairedAngles.empty()).no_pairs
    assert loss_sca(torch.zeros(0, 5), torch.zeros(0, 5), 0.7).no_pairs


def test_consistency_losses_ignore_pi_shifts():
    gen = torch.Generator().manual_seed(0)
    theta = torch.rand(20, generator=gen, dtype=torch.float64) * 3 - 1.5
    view = torch.rand(20, generator=gen, dtype=torch.float64) * 3 - 1.5
    k = torch.randint(-2, 3, (20,), generator=gen).to(torch.float64) * math.pi
    base = loss_rot(PairedAngles(theta, view), 1.0).value
    shifted = loss_rot(PairedAngles(theta + k, view - k), 1.0).value
    assert float(shifted) == pytest.approx(float(base), abs=1e-12)
    assert float(loss_flp(PairedAngles(theta + k, view)).value) == \
        pytest.approx(float(loss_flp(PairedAngles(theta, view)).value), abs=1e-12)


def test_scale_loss_examples():
    ori = torch.tensor([[20.0, 30.0, 16.0, 6.0, 0.4]], dtype=torch.float64)
    scaled = ori.clone()
    scaled[0, :4] *= 0.6
    assert float(loss_sca(ori, scaled, 0.6).value) == pytest.approx(0.0, abs=1e-12)
    assert float(loss_sca(ori, ori, 1.0).value) == pytest.approx(0.0, abs=1e-12)

    doubled = ori.clone()
    doubled[0, 2:4] *= 2.0
    # nested circumscribed boxes: GIoU is the area ratio
    assert float(loss_sca(ori, doubled, 1.0).value) == pytest.approx(0.75, abs=1e-12)


def test_box_loss_examples():
    gt = RBox(10, 10, 8, 4, 0.3)
    assert float(loss_box_ws([gt], [gt], LabelKind.RBOX)) == pytest.approx(0.0, abs=1e-12)

    pred = RBox(0, 0, 2, 2, math.pi / 4)
    circumscribed = RBox(0, 0, 2 * math.sqrt(2), 2 * math.sqrt(2), 0.0)
    assert float(loss_box_ws([pred], [circumscribed], LabelKind.HBOX)) == pytest.approx(0.0, abs=1e-12)

    half = RBox(10, 10, 4, 4, 0.3)
    assert float(loss_box_ws([half], [gt], LabelKind.RBOX)) == pytest.approx(-math.log(0.5), abs=1e-12)


def test_box_loss_accepts_box_lists_against_tensors():
    gt = RBox(10, 10, 8, 4, 0.3)
    target = torch.tensor([[10.0, 10.0, 8.0, 4.0, 0.3]], dtype=torch.float64)
    assert float(loss_box_ws([gt], target, LabelKind.RBOX)) == pytest.approx(0.0, abs=1e-9)
    assert float(loss_box_ws(target, [gt], LabelKind.RBOX)) == pytest.approx(0.0, abs=1e-9)

def test_box_loss_routes_per_row():
    pred = torch.tensor([[0, 0, 2, 2, math.pi / 4], [0, 0, 2, 2, math.pi / 4]], dtype=torch.float64)
    gt = torch.tensor([[0, 0, 2 * math.sqrt(2), 2 * math.sqrt(2), 0.0]] * 2, dtype=torch.float64)
    losses = loss_box_ws(pred, gt, [LabelKind.HBOX, LabelKind.RBOX], reduction="none")
    assert float(losses[0]) == pytest.approx(0.0, abs=1e-12)
    assert float(losses[1]) > 0.5


def test_focal_loss_matches_formula():
    gen = torch.Generator().manual_seed(1)
    logits = torch.randn(30, 3, generator=gen, dtype=torch.float64)
    targets = torch.randint(0, 4, (30,), generator=gen)
    targets[0] = -1
    valid = targets >= 0
    one_hot = F.one_hot(targets[valid], 4)[:, :3].to(torch.float64)
    p = torch.sigmoid(logits[valid])
    manual = -(0.25 * one_hot * (1 - p) ** 2 * torch.log(p)
               + 0.75 * (1 - one_hot) * p ** 2 * torch.log(1 - p)).sum()
    manual = manual / max(float((targets[valid] < 3).sum()), 1.0)
    assert float(loss_cls(logits, targets)) == pytest.approx(float(manual), rel=1e-9)


def test_focal_loss_vanishes_for_confident_correct_logits():
    targets = torch.tensor([0, 1, 2, 2])
    logits = torch.full((4, 2), -30.0, dtype=torch.float64)
    logits[0, 0] = 30.0
    logits[1, 1] = 30.0
    assert float(loss_cls(logits, targets)) < 1e-12


def test_centerness_target_and_loss():
    assert float(centerness_target(torch.tensor([3.0, 2.0, 3.0, 2.0]))) == pytest.approx(1.0)
    assert float(centerness_target(torch.tensor([1.0, 1.0, 3.0, 1.0]))) == pytest.approx(math.sqrt(1 / 3))
    logits = torch.tensor([0.3, -1.2], dtype=torch.float64)
    targets = torch.tensor([0.8, 0.1], dtype=torch.float64)
    p = torch.sigmoid(logits)
    manual = -(targets * torch.log(p) + (1 - targets) * torch.log(1 - p)).mean()
    assert float(loss_cn(logits, targets)) == pytest.approx(float(manual), rel=1e-9)


def test_total_loss_examples():
    weights = LossWeights()
    zeros = {name: torch.tensor(0.0) for name in ("cls", "cn", "box", "rot", "flp", "sca")}
    for mode in LossMode:
        assert float(total_loss(zeros, mode, weights)) == 0.0

    parts = dict(zeros, rot=torch.tensor(1.0), flp=torch.tensor(1.0))
    assert float(total_loss(parts, LossMode.HBOX_CONSISTENCY, weights)) == pytest.approx(1.05)
    assert float(total_loss(parts, LossMode.UNIFIED, weights)) == pytest.approx(2.0)

    subnet = {"cls": torch.tensor(0.5), "box": torch.tensor(2.0), "cn": torch.tensor(7.0), "rot": torch.tensor(9.0)}
    assert float(total_loss(subnet, LossMode.POINT_SUBNET, weights)) == pytest.approx(2.5)


def test_total_loss_point_synthesis_includes_scale():
    parts = {"cls": 0.0, "box": 0.0, "rot": LossTerm(torch.tensor(0.0), 0), "flp": 0.0,
             "sca": LossTerm(torch.tensor(0.4), 3)}
    weights = LossWeights(mu_sca=0.5)
    assert float(total_loss(parts, LossMode.POINT_SYNTHESIS, weights)) == pytest.approx(0.2)


def test_total_loss_missing_part_raises():
    with pytest.raises(ValueError, match="missing loss part"):
        total_loss({"cls": torch.tensor(1.0)}, LossMode.UNIFIED, LossWeights())


def test_loss_weights_reject_negative():
    with pytest.raises(ValueError):
        LossWeights(mu_box=-1.0)


def _random_pair(gen):
    gt = torch.tensor([0.0, 0.0, 6.0, 3.0, 0.4], dtype=torch.float64)
    noise = (torch.rand(5, generator=gen, dtype=torch.float64) - 0.5) * torch.tensor([2, 2, 2, 1, 0.8],
                                                                                         dtype=torch.float64)
    return (gt + noise).requires_grad_(True), gt


def test_scale_loss_gradient_matches_finite_differences():
    gen = torch.Generator().manual_seed(2)
    for _ in range(100):
        pred, gt = _random_pair(gen)
        assert torch.autograd.gradcheck(lambda p: loss_sca(gt[None], p[None], 0.8).value, (pred,),
                                        eps=1e-6, atol=1e-6, rtol=1e-4)


def test_consistency_gradients_match_finite_differences():
    gen = torch.Generator().manual_seed(3)
    for _ in range(100):
        theta = torch.rand(3, generator=gen, dtype=torch.float64) - 0.5
        view = (theta + 0.9 + (torch.rand(3, generator=gen, dtype=torch.float64) - 0.5)).requires_grad_(True)
        assert torch.autograd.gradcheck(lambda v: loss_rot(PairedAngles(theta, v), 0.9).value, (view,),
                                        eps=1e-6, atol=1e-8, rtol=1e-4)


def test_box_loss_gradient_matches_finite_differences():
    gen = torch.Generator().manual_seed(4)
    for _ in range(50):
        pred, gt = _random_pair(gen)
        hbox_gt = torch.tensor([0.0, 0.0, 7.0, 4.5, 0.0], dtype=torch.float64)
        assert torch.autograd.gradcheck(lambda p: loss_box_ws(p[None], gt[None], LabelKind.RBOX), (pred,),
                                        eps=1e-6, atol=1e-6, rtol=1e-4)
        assert torch.autograd.gradcheck(lambda p: loss_box_ws(p[None], hbox_gt[None], LabelKind.HBOX), (pred,),
                                        eps=1e-6, atol=1e-6, rtol=1e-4)
