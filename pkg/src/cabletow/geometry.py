"""Planar rigid-body geometry: oriented boxes, SAT overlap tests, distances.

All boxes are oriented rectangles given by center (cx, cy), half extents
(hx, hy) and yaw. Overlap tests are strict: touching boxes do not overlap.
"""
from __future__ import annotations

import math

import numpy as np

TWO_PI = 2.0 * math.pi


def wrap_angle(theta: float) -> float:
    """Wrap an angle to (-pi, pi]; already-wrapped values pass through bit-identically."""
    if -math.pi < theta <= math.pi:
        return theta
    w = (theta + math.pi) % TWO_PI - math.pi
    if w == -math.pi:
        w = math.pi
    return w


def rot2(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def obb_corners(cx: float, cy: float, hx: float, hy: float, yaw: float) -> np.ndarray:
    """Corners in CCW order, shape (4, 2)."""
    c, s = math.cos(yaw), math.sin(yaw)
    ux, uy = c * hx, s * hx
    vx, vy = -s * hy, c * hy
    return np.array(
        [
            [cx + ux + vx, cy + uy + vy],
            [cx - ux + vx, cy - uy + vy],
            [cx - ux - vx, cy - uy - vy],
            [cx + ux - vx, cy + uy - vy],
        ]
    )


def obb_separation(
    cx1: float, cy1: float, hx1: float, hy1: float, t1: float,
    cx2: float, cy2: float, hx2: float, hy2: float, t2: float,
) -> float:
    """Largest signed gap over the four SAT axes.

    Negative means the boxes overlap (magnitude is a penetration-depth lower
    bound); positive is a lower bound on the true separation distance.
    """
    dx, dy = cx2 - cx1, cy2 - cy1
    c1, s1 = math.cos(t1), math.sin(t1)
    c2, s2 = math.cos(t2), math.sin(t2)
    best = -math.inf
    for ax, ay in ((c1, s1), (-s1, c1), (c2, s2), (-s2, c2)):
        r1 = hx1 * abs(ax * c1 + ay * s1) + hy1 * abs(ay * c1 - ax * s1)
        r2 = hx2 * abs(ax * c2 + ay * s2) + hy2 * abs(ay * c2 - ax * s2)
        gap = abs(ax * dx + ay * dy) - (r1 + r2)
        if gap > best:
            best = gap
    return best


def obb_overlap(
    cx1: float, cy1: float, hx1: float, hy1: float, t1: float,
    cx2: float, cy2: float, hx2: float, hy2: float, t2: float,
) -> bool:
    """Strict SAT overlap test; exactly-touching boxes do not overlap."""
    return obb_separation(cx1, cy1, hx1, hy1, t1, cx2, cy2, hx2, hy2, t2) < 0.0


def point_box_distance(px: float, py: float, cx: float, cy: float,
                       hx: float, hy: float, yaw: float) -> float:
    """Euclidean distance from a point to an oriented box (0 inside)."""
    c, s = math.cos(yaw), math.sin(yaw)
    dx, dy = px - cx, py - cy
    lx = c * dx + s * dy
    ly = -s * dx + c * dy
    ox = abs(lx) - hx
    oy = abs(ly) - hy
    if ox <= 0.0 and oy <= 0.0:
        return 0.0
    return math.hypot(max(ox, 0.0), max(oy, 0.0))


def points_box_distance(points: np.ndarray, cx: float, cy: float,
                        hx: float, hy: float, yaw: float) -> np.ndarray:
    """Vectorized point_box_distance for points of shape (N, 2)."""
    c, s = math.cos(yaw), math.sin(yaw)
    dx = points[:, 0] - cx
    dy = points[:, 1] - cy
    lx = c * dx + s * dy
    ly = -s * dx + c * dy
    ox = np.maximum(np.abs(lx) - hx, 0.0)
    oy = np.maximum(np.abs(ly) - hy, 0.0)
    return np.hypot(ox, oy)


def point_segment_distance(px: float, py: float, ax: float, ay: float,
                           bx: float, by: float) -> float:
    abx, aby = bx - ax, by - ay
    denom = abx * abx + aby * aby
    if denom == 0.0:
        return math.hypot(px - ax, py - ay)
    t = ((px - ax) * abx + (py - ay) * aby) / denom
    t = min(1.0, max(0.0, t))
    return math.hypot(px - (ax + t * abx), py - (ay + t * aby))


def _orient(ax, ay, bx, by, cx, cy) -> float:
    return (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)


def segments_intersect(p1, p2, p3, p4) -> bool:
    d1 = _orient(*p3, *p4, *p1)
    d2 = _orient(*p3, *p4, *p2)
    d3 = _orient(*p1, *p2, *p3)
    d4 = _orient(*p1, *p2, *p4)
    if ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)):
        return True
    # Collinear / endpoint-touching cases count as intersecting (distance 0).
    for d, (qx, qy), (ax, ay), (bx, by) in (
        (d1, p1, p3, p4), (d2, p2, p3, p4), (d3, p3, p1, p2), (d4, p4, p1, p2),
    ):
        if d == 0.0 and min(ax, bx) <= qx <= max(ax, bx) and min(ay, by) <= qy <= max(ay, by):
            return True
    return False


def segment_segment_distance(p1, p2, p3, p4) -> float:
    if segments_intersect(p1, p2, p3, p4):
        return 0.0
    return min(
        point_segment_distance(*p1, *p3, *p4),
        point_segment_distance(*p2, *p3, *p4),
        point_segment_distance(*p3, *p1, *p2),
        point_segment_distance(*p4, *p1, *p2),
    )


def obb_distance(
    cx1: float, cy1: float, hx1: float, hy1: float, t1: float,
    cx2: float, cy2: float, hx2: float, hy2: float, t2: float,
) -> float:
    """Exact distance between two oriented boxes (0 when they overlap)."""
    if obb_overlap(cx1, cy1, hx1, hy1, t1, cx2, cy2, hx2, hy2, t2):
        return 0.0
    a = obb_corners(cx1, cy1, hx1, hy1, t1)
    b = obb_corners(cx2, cy2, hx2, hy2, t2)
    best = math.inf
    for i in range(4):
        e1 = (tuple(a[i]), tuple(a[(i + 1) % 4]))
        for j in range(4):
            e2 = (tuple(b[j]), tuple(b[(j + 1) % 4]))
            d = segment_segment_distance(e1[0], e1[1], e2[0], e2[1])
            if d < best:
                best = d
    return best
