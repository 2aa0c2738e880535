import logging

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from geometry.boxes import RBox
from utils.errors import DegeneratePolygonError


def min_area_rbox(points) -> RBox:
    """Minimum-area rectangle enclosing a planar point set (rotating calipers).

    The optimal rectangle has one side collinear with a convex hull edge, so
    every hull edge direction is tried and the smallest extent product wins.

    Args:
        points: (N, 2) array-like with N >= 3 non-collinear points.

    Returns:
        Long-edge normalised RBox.

    Raises:
        DegeneratePolygonError: fewer than 3 points or all points collinear.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if len(pts) < 3:
        raise DegeneratePolygonError(f"degenerate polygon: need 3 points, got {len(pts)}")

    centred = pts - pts.mean(0)
    if np.linalg.matrix_rank(centred, tol=1e-9 * max(1.0, np.abs(centred).max())) < 2:
        raise DegeneratePolygonError("degenerate polygon: points are collinear")

    try:
        hull = pts[ConvexHull(pts).vertices]
    except QhullError as e:
        logging.error(f"Convex hull failed for {len(pts)} points: {e}")
        raise DegeneratePolygonError(f"degenerate polygon: {e}") from e

    edges = np.roll(hull, -1, axis=0) - hull
    angles = np.unique(np.mod(np.arctan2(edges[:, 1], edges[:, 0]), np.pi / 2))

    best = None
    for phi in angles:
        c, s = np.cos(phi), np.sin(phi)
        # coordinates along the rectangle axes u = (c, s), v = (-s, c)
        u = hull @ np.array([c, s])
        v = hull @ np.array([-s, c])
        area = (u.max() - u.min()) * (v.max() - v.min())
        if best is None or area < best[0]:
            best = (area, phi, u.min(), u.max(), v.min(), v.max())

    _, phi, u0, u1, v0, v1 = best
    uc, vc = (u0 + u1) / 2, (v0 + v1) / 2
    c, s = np.cos(phi), np.sin(phi)
    cx = uc * c - vc * s
    cy = uc * s + vc * c
    return RBox(float(cx), float(cy), float(u1 - u0), float(v1 - v0), float(phi)).normalized()
