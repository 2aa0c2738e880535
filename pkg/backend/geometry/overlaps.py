"""Rotated IoU, circumscribed projection, CircumIoU and GIoU.

All functions take (..., 5) RBox tensors (or anything `as_rboxes` accepts) and
are differentiable with respect to every box parameter away from the
measure-zero configurations where a vertex crosses an edge.
"""

import torch

from geometry.boxes import RBoxLike, as_hboxes, as_rboxes, rbox_corners

IOU_EPS = 1e-7
AREA_EPS = 1e-12
POLYGON_CAPACITY = 8  # convex quad clipped by a convex quad has at most 8 vertices


def _cross(ax, ay, bx, by):
    return ax * by - ay * bx


def _clip_halfplane(poly: torch.Tensor, count: torch.Tensor, a: torch.Tensor, b: torch.Tensor):
    """One Sutherland-Hodgman pass: keep the part of `poly` left of the directed edge a->b.

    poly: (B, K, 2) vertices, only the first count[i] rows are meaningful.
    a, b: (B, 2) edge endpoints of a counter-clockwise clip polygon.
    """
    batch, capacity, _ = poly.shape
    idx = torch.arange(capacity, device=poly.device)[None, :]
    valid = idx < count[:, None]
    nxt = (idx + 1) % count.clamp(min=1)[:, None]

    edge = (b - a)[:, None, :]
    rel = poly - a[:, None, :]
    side = _cross(edge[..., 0], edge[..., 1], rel[..., 0], rel[..., 1])
    side_next = torch.gather(side, 1, nxt)
    nxt_pts = torch.gather(poly, 1, nxt[..., None].expand(-1, -1, 2))

    inside = side >= 0
    inside_next = side_next >= 0
    keep = valid & inside
    crossing = valid & (inside != inside_next)

    denom = torch.where(crossing, side - side_next, torch.ones_like(side))
    t = torch.where(crossing, side / denom, torch.zeros_like(side))
    inter = poly + t[..., None] * (nxt_pts - poly)

    candidates = torch.stack([poly, inter], dim=2).reshape(batch, 2 * capacity, 2)
    mask = torch.stack([keep, crossing], dim=2).reshape(batch, 2 * capacity)
    order = torch.sort((~mask).to(torch.int8), dim=1, stable=True).indices
    compact = torch.gather(candidates, 1, order[..., None].expand(-1, -1, 2))
    new_count = mask.sum(1).clamp(max=POLYGON_CAPACITY)
    return compact[:, :POLYGON_CAPACITY], new_count


def polygon_area(poly: torch.Tensor, count: torch.Tensor) -> torch.Tensor:
    """Shoelace area of (B, K, 2) polygons with per-row vertex counts; 0 below 3 vertices."""
    capacity = poly.shape[1]
    idx = torch.arange(capacity, device=poly.device)[None, :]
    valid = idx < count[:, None]
    nxt = (idx + 1) % count.clamp(min=1)[:, None]
    nxt_pts = torch.gather(poly, 1, nxt[..., None].expand(-1, -1, 2))
    terms = _cross(poly[..., 0], poly[..., 1], nxt_pts[..., 0], nxt_pts[..., 1])
    area = 0.5 * torch.where(valid, terms, torch.zeros_like(terms)).sum(1).abs()
    return torch.where(count >= 3, area, torch.zeros_like(area))


def intersection_area(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Area of the overlap of two equally shaped (..., 5) RBox tensors."""
    a, b = torch.broadcast_tensors(a, b)
    shape = a.shape[:-1]
    a = a.reshape(-1, 5)
    b = b.reshape(-1, 5)
    subject = rbox_corners(a)
    clip = rbox_corners(b)
    poly = torch.cat([subject, subject.new_zeros(subject.shape[0], POLYGON_CAPACITY - 4, 2)], 1)
    count = torch.full((a.shape[0],), 4, dtype=torch.long, device=a.device)
    for k in range(4):
        poly, count = _clip_halfplane(poly, count, clip[:, k], clip[:, (k + 1) % 4])
    return polygon_area(poly, count).reshape(shape)


def rotated_iou(a: RBoxLike, b: RBoxLike) -> torch.Tensor:
    """IoU of oriented boxes via convex clipping; boxes with near-zero area overlap nothing."""
    a, b = as_rboxes(a), as_rboxes(b)
    inter = intersection_area(a, b)
    area_a = a[..., 2] * a[..., 3]
    area_b = b[..., 2] * b[..., 3]
    union = (area_a + area_b - inter).clamp(min=AREA_EPS)
    iou = inter / union
    degenerate = (area_a < AREA_EPS) | (area_b < AREA_EPS)
    return torch.where(degenerate, torch.zeros_like(iou), iou)


def pairwise_rotated_iou(a: RBoxLike, b: RBoxLike) -> torch.Tensor:
    """(N, M) IoU matrix between two box sets."""
    a, b = as_rboxes(a).reshape(-1, 5), as_rboxes(b).reshape(-1, 5)
    n, m = a.shape[0], b.shape[0]
    if n == 0 or m == 0:
        return a.new_zeros((n, m))
    return rotated_iou(a[:, None, :].expand(n, m, 5), b[None, :, :].expand(n, m, 5))


def rotated_iou_loss(pred: RBoxLike, gt: RBoxLike) -> torch.Tensor:
    """-ln RotatedIoU with the ratio clamped to [1e-7, 1]."""
    return -torch.log(rotated_iou(pred, gt).clamp(IOU_EPS, 1.0))


def project_to_orientation(pred: RBoxLike, gt: RBoxLike) -> torch.Tensor:
    """Smallest rectangle with the orientation of `gt` that contains `pred`."""
    pred, gt = as_rboxes(pred), as_rboxes(gt)
    pred, gt = torch.broadcast_tensors(pred, gt)
    delta = pred[..., 4] - gt[..., 4]
    c, s = torch.cos(delta).abs(), torch.sin(delta).abs()
    w = c * pred[..., 2] + s * pred[..., 3]
    h = s * pred[..., 2] + c * pred[..., 3]
    return torch.stack([pred[..., 0], pred[..., 1], w, h, gt[..., 4]], -1)


def _aligned_iou(proj: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    """IoU of two boxes sharing gt's orientation, measured in gt's frame."""
    theta = gt[..., 4]
    c, s = torch.cos(theta), torch.sin(theta)
    dx = proj[..., 0] - gt[..., 0]
    dy = proj[..., 1] - gt[..., 1]
    lx = dx * c + dy * s
    ly = -dx * s + dy * c
    overlap_x = (torch.minimum(lx + proj[..., 2] / 2, gt[..., 2] / 2)
                 - torch.maximum(lx - proj[..., 2] / 2, -gt[..., 2] / 2)).clamp(min=0)
    overlap_y = (torch.minimum(ly + proj[..., 3] / 2, gt[..., 3] / 2)
                 - torch.maximum(ly - proj[..., 3] / 2, -gt[..., 3] / 2)).clamp(min=0)
    inter = overlap_x * overlap_y
    union = proj[..., 2] * proj[..., 3] + gt[..., 2] * gt[..., 3] - inter
    return inter / union.clamp(min=AREA_EPS)


def circum_iou(pred: RBoxLike, gt: RBoxLike) -> torch.Tensor:
    pred, gt = as_rboxes(pred), as_rboxes(gt)
    return _aligned_iou(project_to_orientation(pred, gt), torch.broadcast_tensors(gt, pred)[0])


def circum_iou_loss(pred: RBoxLike, gt: RBoxLike) -> torch.Tensor:
    """-ln IoU(B_proj, gt) where B_proj circumscribes pred in gt's orientation."""
    return -torch.log(circum_iou(pred, gt).clamp(IOU_EPS, 1.0))


def hbox_giou(a, b) -> torch.Tensor:
    """Generalised IoU of (..., 4) corner boxes, in (-1, 1]."""
    a, b = as_hboxes(a), as_hboxes(b)
    area_a = (a[..., 2] - a[..., 0]) * (a[..., 3] - a[..., 1])
    area_b = (b[..., 2] - b[..., 0]) * (b[..., 3] - b[..., 1])
    iw = (torch.minimum(a[..., 2], b[..., 2]) - torch.maximum(a[..., 0], b[..., 0])).clamp(min=0)
    ih = (torch.minimum(a[..., 3], b[..., 3]) - torch.maximum(a[..., 1], b[..., 1])).clamp(min=0)
    inter = iw * ih
    union = (area_a + area_b - inter).clamp(min=AREA_EPS)
    cw = torch.maximum(a[..., 2], b[..., 2]) - torch.minimum(a[..., 0], b[..., 0])
    ch = torch.maximum(a[..., 3], b[..., 3]) - torch.minimum(a[..., 1], b[..., 1])
    enclosing = (cw * ch).clamp(min=AREA_EPS)
    return inter / union - (enclosing - union) / enclosing
