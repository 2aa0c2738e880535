import math

import numpy as np
import pytest
import torch
import torch.nn.functional as F

from angle_coding import angle_encode, decode_predicted
from detector import (
    AssignmentResult,
    GroundTruth,
    ModelConfig,
    PointSubnet,
    TinyBackbone,
    assign_fcos,
    assign_points_nearest,
    assign_score_based,
    build_model,
    decode_ltrb,
    encode_ltrb,
    level_points,
    load_checkpoint,
    pair_views,
    save_checkpoint,
)
from detector.assigners import regress_ranges
from detector.checkpoint import Checkpoint
from utils.errors import DataError


def _gt(boxes=None, centers=None, categories=None, is_hbox=None) -> GroundTruth:
    if boxes is None:
        centers = torch.as_tensor(centers, dtype=torch.float64).reshape(-1, 2)
        boxes = torch.full((centers.shape[0], 5), math.nan, dtype=torch.float64)
    else:
        boxes = torch.as_tensor(boxes, dtype=torch.float64).reshape(-1, 5)
        centers = boxes[:, :2].clone()
    count = boxes.shape[0]
    categories = torch.zeros(count, dtype=torch.long) if categories is None else torch.as_tensor(categories)
    is_hbox = torch.zeros(count, dtype=torch.bool) if is_hbox is None else torch.as_tensor(is_hbox)
    return GroundTruth(centers, boxes, categories, is_hbox, torch.zeros(count, dtype=torch.bool))


def _result(gt_index, num_objects) -> AssignmentResult:
    gt_index = torch.as_tensor(gt_index, dtype=torch.long)
    n = gt_index.numel()
    return AssignmentResult(torch.zeros(n, dtype=torch.long), gt_index, torch.zeros(n, 5), torch.zeros(n),
                            torch.zeros(n, dtype=torch.bool), torch.zeros(n, dtype=torch.bool),
                            torch.zeros(n, dtype=torch.bool), num_objects, [])


def _config(**kwargs) -> ModelConfig:
    return ModelConfig(class_names=["a", "b"], channels=16, **kwargs)


# --- networks -----------------------------------------------------------------------------------------------

def test_backbone_level_shapes():
    torch.manual_seed(0)
    pyramid = TinyBackbone(channels=32)(torch.rand(2, 3, 128, 128))
    assert [tuple(p.shape[-2:]) for p in pyramid] == [(16, 16), (8, 8), (4, 4), (2, 2), (1, 1)]
    assert all(p.shape[:2] == (2, 32) for p in pyramid)


def test_backbone_deterministic_and_finite():
    torch.manual_seed(0)
    net = TinyBackbone()
    images = torch.rand(1, 3, 128, 256)
    first, second = net(images), net(images.clone())
    for a, b in zip(first, second):
        assert torch.equal(a, b)
        assert torch.isfinite(a).all()


def test_backbone_rejects_bad_size():
    with pytest.raises(DataError):
        TinyBackbone()(torch.rand(1, 3, 100, 128))


def test_dense_head_shapes():
    model = build_model(_config(), seed=0)
    pred = model(torch.rand(1, 3, 128, 128))
    num_locations = 16 ** 2 + 8 ** 2 + 4 ** 2 + 2 ** 2 + 1
    assert pred.cls_logits.shape == (1, num_locations, 2)
    assert pred.centerness.shape == (1, num_locations)
    assert pred.ltrb.shape == (1, num_locations, 4) and (pred.ltrb > 0).all()
    assert pred.angle_code.shape == (1, num_locations, 3)
    assert pred.boxes().shape == (1, num_locations, 5)
    assert torch.isfinite(pred.boxes()).all()


def test_level_points_are_cell_centres():
    points, strides, levels, shapes = level_points(128, 128)
    assert shapes[0] == (16, 16)
    assert points[0].tolist() == [4.0, 4.0]
    assert points[1].tolist() == [12.0, 4.0]
    assert strides[256].item() == 16 and levels[256].item() == 1
    assert points[256].tolist() == [8.0, 8.0]


def test_ltrb_encode_decode_consistent():
    box = torch.tensor([[40.0, 30.0, 24.0, 10.0, 0.6]], dtype=torch.float64)
    points = torch.tensor([[40.0, 30.0], [43.0, 31.0], [37.5, 28.0]], dtype=torch.float64)
    ltrb = encode_ltrb(points, box.expand(3, 5))
    decoded = decode_ltrb(points, ltrb, box[:, 4].expand(3))
    torch.testing.assert_close(decoded, box.expand(3, 5))
    assert (ltrb > 0).all()
    torch.testing.assert_close(ltrb[0], torch.tensor([12.0, 5.0, 12.0, 5.0], dtype=torch.float64))


def test_fuse_fpn_is_convex_combination():
    torch.manual_seed(1)
    subnet = PointSubnet(num_classes=2, channels=8)
    pyramid = subnet.backbone(torch.rand(1, 3, 128, 128))
    fused, gates = subnet.fuse_fpn(pyramid)
    assert fused.shape == (1, 8, 16, 16) and gates.shape == (1, 5, 16, 16)
    torch.testing.assert_close(gates.sum(1), torch.ones(1, 16, 16))
    stacked = torch.stack([F.interpolate(p, size=(16, 16), mode="nearest") for p in pyramid])
    assert (fused >= stacked.min(0).values - 1e-5).all()
    assert (fused <= stacked.max(0).values + 1e-5).all()


@pytest.mark.parametrize("level", [0, 2, 4])
def test_fuse_fpn_one_hot_gate_selects_level(level):
    torch.manual_seed(2)
    subnet = PointSubnet(num_classes=2, channels=8)
    with torch.no_grad():
        subnet.gate_conv.weight.zero_()
        subnet.gate_conv.bias.zero_()
        subnet.gate_bias.copy_(torch.tensor([100.0 if n == level else 0.0 for n in range(5)]))
    pyramid = subnet.backbone(torch.rand(1, 3, 128, 128))
    fused, _ = subnet.fuse_fpn(pyramid)
    expected = F.interpolate(pyramid[level], size=(16, 16), mode="nearest")
    torch.testing.assert_close(fused, expected, atol=1e-5, rtol=1e-5)


def test_point_subnet_shares_one_gate_conv_and_starts_near_p3():
    subnet = PointSubnet(num_classes=2, channels=8)
    assert subnet.gate_conv.out_channels == 1
    assert subnet.gate_bias.tolist() == pytest.approx([0.0, -0.5, -1.0, -1.5, -2.0])


@pytest.mark.parametrize("level, factor", [(0, 1.0), (4, 16.0)])
def test_point_subnet_box_scaling_from_one_hot_gates(level, factor):
    torch.manual_seed(3)
    subnet = PointSubnet(num_classes=2, channels=8).double()
    gates = torch.zeros(1, 5, 16, 16, dtype=torch.float64)
    gates[:, level] = 1.0
    pred = subnet(torch.rand(1, 3, 128, 128, dtype=torch.float64), gates=gates)
    torch.testing.assert_close(pred.scale, torch.full((1, 256), factor, dtype=torch.float64))
    torch.testing.assert_close(pred.boxes[..., 2:4], pred.raw_sizes * factor)


def test_point_subnet_without_fusion_uses_p3_only():
    torch.manual_seed(4)
    subnet = PointSubnet(num_classes=2, channels=8, fusion=False)
    pred = subnet(torch.rand(2, 3, 128, 128))
    assert torch.equal(pred.scale, torch.ones(2, 256))
    assert torch.equal(pred.gates[..., 0], torch.ones(2, 256))
    torch.testing.assert_close(pred.boxes[..., 2:4], pred.raw_sizes)


# --- assigners ------------------------------------------------------------------------------------------------

def _brute_force_fcos(boxes, points, strides, levels, image_size, radius=1.5):
    ranges = regress_ranges(image_size)
    owners = []
    for (px, py), stride, level in zip(points.tolist(), strides.tolist(), levels.tolist()):
        best, best_area = -1, math.inf
        for g, (cx, cy, w, h, theta) in enumerate(boxes):
            c, s = math.cos(theta), math.sin(theta)
            rx, ry = px - cx, py - cy
            lx, ly = rx * c + ry * s, -rx * s + ry * c
            left, top, right, bottom = lx + w / 2, ly + h / 2, w / 2 - lx, h / 2 - ly
            if min(left, top, right, bottom) <= 0:
                continue
            if abs(left - w / 2) >= radius * stride or abs(top - h / 2) >= radius * stride:
                continue
            reach = max(left, top, right, bottom)
            low, high = ranges[level]
            if not low < reach <= high:
                continue
            if w * h < best_area:
                best, best_area = g, w * h
        owners.append(best)
    return owners


def test_fcos_centered_gt_takes_its_grid_point():
    points, strides, levels, _ = level_points(128, 128)
    result = assign_fcos(_gt([[36.0, 36.0, 12.0, 6.0, 0.3]]), points, strides, levels, num_classes=2,
                         image_size=128)
    loc = int(torch.nonzero((points == torch.tensor([36.0, 36.0])).all(-1))[0])
    assert result.gt_index[loc] == 0 and result.labels[loc] == 0
    assert result.centerness[loc] == pytest.approx(1.0)
    assert result.unassigned == []


def test_fcos_tiny_gt_only_on_finest_level():
    points, strides, levels, _ = level_points(128, 128)
    result = assign_fcos(_gt([[36.0, 36.0, 10.0, 6.0, 0.0]]), points, strides, levels, 2, 128)
    assert result.num_positives >= 1
    assert (levels[result.positives] == 0).all()


def test_fcos_background_and_box_targets():
    points, strides, levels, _ = level_points(128, 128)
    gt = _gt([[64.0, 64.0, 40.0, 20.0, 0.0]], categories=[1], is_hbox=[True])
    result = assign_fcos(gt, points, strides, levels, num_classes=2, image_size=128)
    pos = result.positives
    assert (result.labels[~pos] == 2).all() and (result.labels[pos] == 1).all()
    assert result.is_hbox[pos].all() and result.box_mask[pos].all()
    torch.testing.assert_close(result.box_targets[pos][0], gt.boxes[0])


def test_fcos_matches_brute_force_on_random_layouts():
    rng = np.random.default_rng(5)
    points, strides, levels, _ = level_points(128, 128)
    for _ in range(20):
        count = int(rng.integers(1, 6))
        boxes = [[float(rng.uniform(10, 118)), float(rng.uniform(10, 118)), float(rng.uniform(6, 80)),
                  float(rng.uniform(4, 30)), float(rng.uniform(-math.pi / 2, math.pi / 2))] for _ in range(count)]
        result = assign_fcos(_gt(boxes), points, strides, levels, num_classes=1, image_size=128, fallback=False)
        assert result.gt_index.tolist() == _brute_force_fcos(boxes, points, strides, levels, 128)


def test_fcos_point_labels_go_to_nearest_p3_location():
    points, strides, levels, _ = level_points(128, 128)
    result = assign_fcos(_gt(centers=[[37.0, 35.0]]), points, strides, levels, 2, 128)
    loc = int(torch.nonzero(result.positives)[0])
    assert points[loc].tolist() == [36.0, 36.0]
    assert not result.box_mask[loc]


def _grid_points(size=16, stride=8):
    return level_points(size * stride, size * stride, strides=(stride,))[0]


def test_nearest_exact_and_tie_rule():
    points = _grid_points()
    result = assign_points_nearest(_gt(centers=[[20.0, 36.0], [8.0, 4.0]]), points, num_classes=3)
    assert points[result.locations_of(0)].tolist() == [[20.0, 36.0]]
    # (8, 4) is equidistant from (4, 4) and (12, 4): the lower index wins
    assert result.locations_of(1).tolist() == [0]


def test_nearest_collision_moves_second_object():
    points = _grid_points()
    result = assign_points_nearest(_gt(centers=[[4.5, 4.0], [4.0, 4.5]]), points, num_classes=1)
    assert result.locations_of(0).tolist() == [0]
    # next nearest free location of (4, 4.5): (4, 12) at index 16 is 7.5 away, (12, 4) 8.01
    assert result.locations_of(1).tolist() == [16]


def test_nearest_matches_brute_force():
    rng = np.random.default_rng(6)
    points = _grid_points()
    centers = rng.uniform(0, 128, size=(12, 2))
    result = assign_points_nearest(_gt(centers=centers), points, num_classes=1)
    taken = set()
    for g, (x, y) in enumerate(centers):
        dists = [((px - x) ** 2 + (py - y) ** 2, idx) for idx, (px, py) in enumerate(points.tolist())]
        loc = min(d for d in dists if d[1] not in taken)[1]
        taken.add(loc)
        assert result.locations_of(g).tolist() == [loc]


def test_nearest_marks_synthetic_boxes():
    points = _grid_points()
    gt = _gt(centers=[[20.0, 20.0]]).extend(torch.tensor([[60.0, 60.0, 20.0, 8.0, 0.2]]), torch.tensor([1]))
    result = assign_points_nearest(gt, points, num_classes=2)
    synth_loc = result.locations_of(1)
    assert result.synth_mask[synth_loc].all() and result.box_mask[synth_loc].all()
    assert not result.synth_mask[result.locations_of(0)].any()
    assert (~result.synth_mask | result.positives).all()


def test_score_based_gate():
    anchors = torch.tensor([[40.0, 40.0], [73.0, 40.0], [60.0, 52.0]])
    scores = torch.tensor([[0.0], [0.99], [0.9]])
    result = assign_score_based(_gt(centers=[[40.0, 40.0]]), anchors, scores, topk=4)
    # 33 px away in L1: never assigned even with the best score
    assert result.gt_index.tolist() == [0, -1, 0]
    alone = assign_score_based(_gt(centers=[[40.0, 40.0]]), anchors[:1], torch.zeros(1, 1))
    assert alone.gt_index.tolist() == [0]


def test_score_based_no_anchor_in_gate_is_unassigned():
    result = assign_score_based(_gt(centers=[[0.0, 0.0]]), torch.tensor([[100.0, 100.0]]), torch.ones(1, 1))
    assert result.unassigned == [0]


def test_score_based_top4_matches_sort():
    rng = np.random.default_rng(7)
    anchors = torch.tensor(rng.uniform(30, 50, size=(10, 2)))
    scores = torch.tensor(rng.uniform(0, 1, size=(10, 2)))
    result = assign_score_based(_gt(centers=[[40.0, 40.0]], categories=[1]), anchors, scores)
    expected = sorted(np.argsort(-scores[:, 1].numpy(), kind="stable")[:4].tolist())
    assert result.locations_of(0).tolist() == expected


# --- view pairing ---------------------------------------------------------------------------------------------

def test_pair_views_single_locations_are_raw_angles():
    theta = torch.tensor([0.3, -0.5, 1.0], dtype=torch.float64)
    a = _result([0, 1, 2], 3)
    pairs, objects = pair_views(a, angle_encode(theta), a, angle_encode(theta + 0.2), keep=[True, True, True])
    assert objects.tolist() == [0, 1, 2]
    torch.testing.assert_close(pairs.theta, theta, atol=1e-6, rtol=0)
    torch.testing.assert_close(pairs.theta_view, theta + 0.2, atol=1e-6, rtol=0)


def test_pair_views_drops_lost_objects():
    theta = torch.tensor([0.3, -0.5], dtype=torch.float64)
    a = _result([0, 1], 2)
    a_view = _result([0, -1], 2)
    pairs, objects = pair_views(a, angle_encode(theta), a_view, angle_encode(theta), keep=[True, True])
    assert objects.tolist() == [0]
    pairs, objects = pair_views(a, angle_encode(theta), a, angle_encode(theta), keep=[False, True])
    assert objects.tolist() == [1] and len(pairs) == 1
    excluded = torch.tensor([False, True])
    pairs, objects = pair_views(a, angle_encode(theta), a, angle_encode(theta), keep=[True, True],
                                excluded=excluded)
    assert objects.tolist() == [0]


def test_pair_views_averages_codes_of_multi_location_objects():
    codes = angle_encode(torch.tensor([0.2, 0.4, 0.35, -1.0], dtype=torch.float64))
    a = _result([0, 0, 0, 1], 2)
    pairs, _ = pair_views(a, codes, a, codes, keep=[True, True])
    manual = decode_predicted(codes[:3].mean(0))
    assert float(pairs.theta[0]) == pytest.approx(float(manual), abs=1e-12)
    assert float(pairs.theta[1]) == pytest.approx(-1.0, abs=1e-6)


# --- model and checkpoints ------------------------------------------------------------------------------------

def test_model_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(class_names=["a"], image_size=100)
    with pytest.raises(ValueError):
        ModelConfig(class_names=["a"], rotation_agnostic=[3])
    with pytest.raises(ValueError):
        ModelConfig(class_names=["a"], inference_head="point")


def test_untrained_model_detects_nothing_and_is_idempotent():
    model = build_model(_config(), seed=0).eval()
    images = torch.rand(2, 3, 128, 128)
    first = model.detect(images, score_thresh=0.3)
    assert first == [[], []]
    low = model.detect(images[:1], score_thresh=0.0, nms_thresh=0.5)
    again = model.detect(images[:1], score_thresh=0.0, nms_thresh=0.5)
    assert len(low[0]) > 0
    assert [(d.box, d.category, d.score) for d in low[0]] == [(d.box, d.category, d.score) for d in again[0]]


def test_checkpoint_roundtrip(tmp_path):
    model = build_model(_config(point_subnet=True, rotation_agnostic=[1]), seed=0).eval()
    path = save_checkpoint(tmp_path / "model.wrbx", Checkpoint.from_model(model, {"epoch": 3}))
    loaded = load_checkpoint(path)
    assert loaded.config == model.config
    assert loaded.meta == {"epoch": 3}
    rebuilt = loaded.build_model()
    for name, tensor in model.state_dict().items():
        assert torch.equal(rebuilt.state_dict()[name], tensor)
    images = torch.rand(1, 3, 128, 128)
    assert torch.equal(model(images).cls_logits, rebuilt(images).cls_logits)


def test_checkpoint_layout_and_bad_magic(tmp_path):
    model = build_model(_config(), seed=0)
    path = save_checkpoint(tmp_path / "model.wrbx", Checkpoint.from_model(model))
    data = path.read_bytes()
    assert data[:4] == b"WRBX"
    assert int.from_bytes(data[4:8], "little") == 1
    header_len = int.from_bytes(data[8:16], "little")
    assert data[16:16 + header_len].startswith(b"{")

    bad = tmp_path / "bad.wrbx"
    bad.write_bytes(b"XXXX" + data[4:])
    with pytest.raises(DataError):
        load_checkpoint(bad)
    truncated = tmp_path / "short.wrbx"
    truncated.write_bytes(data[:-10])
    with pytest.raises(DataError):
        load_checkpoint(truncated)
