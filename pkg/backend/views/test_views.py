import math

import numpy as np
import pytest
import torch

from dataio.annotations import ImageAnnotations, Instance
from geometry import HBox, PointLabel, RBox, rbox_to_corners, rotated_iou
from views import PaddingMode, ViewKind, ViewMode, ViewTransform, apply_view, sample_view, warp_image


def _scene(width=64, height=64) -> ImageAnnotations:
    return ImageAnnotations("scene", width, height, [
        Instance(RBox(20, 30, 16, 6, 0.4), 0),
        Instance(HBox(40, 10, 50, 24), 1),
        Instance(PointLabel(12, 50, 2), 2),
    ])


def _bilinear(image: np.ndarray, row: float, col: float) -> float:
    r0, c0 = int(math.floor(row)), int(math.floor(col))
    r1, c1 = min(r0 + 1, image.shape[0] - 1), min(c0 + 1, image.shape[1] - 1)
    fr, fc = row - r0, col - c0
    top = image[r0, c0] * (1 - fc) + image[r0, c1] * fc
    bottom = image[r1, c0] * (1 - fc) + image[r1, c1] * fc
    return top * (1 - fr) + bottom * fr


def test_view_frequencies_unified():
    rng = np.random.default_rng(0)
    kinds = [sample_view(ViewMode.UNIFIED, rng).kind for _ in range(100_000)]
    assert kinds.count(ViewKind.FLIP) / len(kinds) == pytest.approx(0.05, abs=0.01)
    assert ViewKind.SCALE not in kinds


def test_view_frequencies_point():
    rng = np.random.default_rng(1)
    kinds = [sample_view(ViewMode.POINT, rng).kind for _ in range(100_000)]
    assert kinds.count(ViewKind.SCALE) / len(kinds) == pytest.approx(0.30, abs=0.01)
    assert kinds.count(ViewKind.FLIP) / len(kinds) == pytest.approx(0.035, abs=0.01)


def test_sampled_parameters_in_range():
    rng = np.random.default_rng(2)
    for _ in range(2000):
        view = sample_view(ViewMode.POINT, rng)
        if view.kind is ViewKind.ROTATE:
            assert math.pi / 4 <= view.angle <= 3 * math.pi / 4
        elif view.kind is ViewKind.SCALE:
            assert 0.5 < view.scale < 1.5


def test_custom_rotation_range():
    rng = np.random.default_rng(3)
    angles = [sample_view(ViewMode.HBOX, rng, rotation_range=(-math.pi, math.pi)).angle for _ in range(500)]
    assert min(angles) < -2 and max(angles) > 2


@pytest.mark.parametrize("view", [
    ViewTransform(ViewKind.FLIP),
    ViewTransform(ViewKind.ROTATE, angle=1.1),
    ViewTransform(ViewKind.SCALE, scale=0.7),
])
def test_forward_map_composed_with_inverse_is_identity(view):
    m = view.matrix(64, 48) @ view.inverse().matrix(64, 48)
    np.testing.assert_allclose(m, np.eye(3), atol=1e-9)


def test_flip_twice_restores_annotations():
    anns = _scene()
    image = np.random.default_rng(4).random((64, 64, 3))
    flip = ViewTransform(ViewKind.FLIP)
    once_img, once, _ = apply_view(image, anns, flip)
    twice_img, twice, keep = apply_view(once_img, once, flip)
    assert keep.all()
    np.testing.assert_allclose(twice_img, image)
    for a, b in zip(anns.instances, twice.instances):
        np.testing.assert_allclose(np.ravel(b.to_dict()["values"]), np.ravel(a.to_dict()["values"]), atol=1e-9)


def test_flip_negates_angle():
    _, flipped, _ = apply_view(np.zeros((64, 64)), _scene(), ViewTransform(ViewKind.FLIP))
    box = flipped.instances[0].label
    assert box.theta == pytest.approx(-0.4)
    assert (box.cx, box.cy) == pytest.approx((20, 34))


def test_rotate_moves_angle_and_center():
    view = ViewTransform(ViewKind.ROTATE, angle=0.9)
    _, rotated, keep = apply_view(np.zeros((64, 64)), _scene(), view)
    box = rotated.instances[0].label
    diff = (box.theta - (0.4 + 0.9) + math.pi / 2) % math.pi - math.pi / 2
    assert diff == pytest.approx(0.0, abs=1e-12)
    c, s = math.cos(0.9), math.sin(0.9)
    assert box.cx == pytest.approx(32 + c * (20 - 32) - s * (30 - 32))
    assert box.cy == pytest.approx(32 + s * (20 - 32) + c * (30 - 32))
    assert keep[0]


def test_rotated_hbox_is_recircumscribed():
    view = ViewTransform(ViewKind.ROTATE, angle=0.5)
    _, rotated, _ = apply_view(np.zeros((64, 64)), _scene(), view)
    hbox = rotated.instances[1].label
    corners = view.map_points(torch.tensor([[40, 10], [50, 10], [50, 24], [40, 24]], dtype=torch.float64), 64, 64)
    assert hbox.xmin == pytest.approx(float(corners[:, 0].min()))
    assert hbox.ymax == pytest.approx(float(corners[:, 1].max()))


def test_keep_mask_drops_centers_leaving_non_square_canvas():
    anns = ImageAnnotations("wide", 64, 32, [Instance(PointLabel(60, 16), 0), Instance(PointLabel(32, 16), 0)])
    _, mapped, keep = apply_view(np.zeros((32, 64)), anns, ViewTransform(ViewKind.ROTATE, angle=math.pi / 2))
    assert keep.tolist() == [False, True]
    assert mapped.instances[0].center == pytest.approx((32, 44))


def test_view_roundtrip_preserves_kept_boxes():
    rng = np.random.default_rng(5)
    for _ in range(50):
        anns = ImageAnnotations("r", 96, 96, [Instance(RBox(rng.uniform(30, 66), rng.uniform(30, 66),
                                                            rng.uniform(8, 20), rng.uniform(3, 8),
                                                            rng.uniform(-1.5, 1.5)), 0)])
        view = sample_view(ViewMode.POINT, rng)
        _, forward, keep = apply_view(np.zeros((96, 96)), anns, view)
        _, back, _ = apply_view(np.zeros((96, 96)), forward, view.inverse())
        if keep[0]:
            assert float(rotated_iou(back.instances[0].label, anns.instances[0].label)) >= 1 - 1e-6


def test_scale_view_scales_sizes_exactly():
    _, scaled, _ = apply_view(np.zeros((64, 64)), _scene(), ViewTransform(ViewKind.SCALE, scale=0.75))
    box = scaled.instances[0].label
    assert (box.w, box.h) == pytest.approx((12, 4.5))
    assert (box.cx, box.cy) == pytest.approx((15, 22.5))
    np.testing.assert_allclose(rbox_to_corners(box), 0.75 * rbox_to_corners(RBox(20, 30, 16, 6, 0.4)), atol=1e-9)


def test_quarter_turn_permutes_pixels():
    image = np.random.default_rng(6).random((8, 8))
    warped = warp_image(image, ViewTransform(ViewKind.ROTATE, angle=math.pi / 2))
    np.testing.assert_allclose(warped, np.rot90(image, -1), atol=1e-9)


def test_rotate_pixels_are_bilinear_samples_of_source():
    image = np.random.default_rng(7).random((16, 16))
    view = ViewTransform(ViewKind.ROTATE, angle=0.3)
    warped = warp_image(image, view)
    inverse = np.linalg.inv(view.matrix(16, 16))
    checked = 0
    for i in range(16):
        for j in range(16):
            sx, sy, _ = inverse @ np.array([j + 0.5, i + 0.5, 1.0])
            row, col = sy - 0.5, sx - 0.5
            if 0 <= row <= 15 and 0 <= col <= 15:
                assert warped[i, j] == pytest.approx(_bilinear(image, row, col), abs=1e-6)
                checked += 1
    assert checked > 150


def test_padding_modes_differ_on_exposed_border():
    image = np.full((32, 32, 3), 0.6)
    view = ViewTransform(ViewKind.ROTATE, angle=math.pi / 4)
    reflected = warp_image(image, view, PaddingMode.REFLECTION)
    zeros = warp_image(image, view, PaddingMode.ZEROS)
    np.testing.assert_allclose(reflected, 0.6, atol=1e-9)
    assert zeros[0, 0, 0] == pytest.approx(0.0)
    assert zeros[16, 16, 0] == pytest.approx(0.6)
