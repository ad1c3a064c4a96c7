"""Oriented bounding boxes and overlap measures on the BEV plane.

Boxes are center/extent/heading tuples; overlap uses exact convex polygon
clipping (Sutherland-Hodgman) plus the shoelace formula.  The generalized IoU
enclosure is the axis-aligned bounding rectangle of both boxes' corners, so
GIoU reaches exactly 1 only for identical axis-aligned boxes and tends to -1
as boxes move far apart.  Degenerate extents are clamped to 1e-6.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import UndefinedAngleError

MIN_EXTENT = 1e-6


@dataclass(frozen=True)
class OrientedBox:
    """A rotated rectangle: center (cx, cy), extent (w, h), heading theta."""

    cx: float
    cy: float
    w: float
    h: float
    theta: float = 0.0

    def clamped(self) -> "OrientedBox":
        if self.w >= MIN_EXTENT and self.h >= MIN_EXTENT:
            return self
        return OrientedBox(self.cx, self.cy, max(self.w, MIN_EXTENT),
                           max(self.h, MIN_EXTENT), self.theta)

    @property
    def area(self) -> float:
        b = self.clamped()
        return b.w * b.h

    def corners(self) -> np.ndarray:
        """The four corners in counter-clockwise order, shape (4, 2)."""
        b = self.clamped()
        c, s = np.cos(b.theta), np.sin(b.theta)
        local = np.array([[b.w, b.h], [-b.w, b.h], [-b.w, -b.h], [b.w, -b.h]]) * 0.5
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + np.array([b.cx, b.cy])

    def aabb(self) -> tuple[float, float, float, float]:
        """Axis-aligned bounds (xmin, ymin, xmax, ymax) of the corners."""
        pts = self.corners()
        return (pts[:, 0].min(), pts[:, 1].min(), pts[:, 0].max(), pts[:, 1].max())


def polygon_area(points: np.ndarray) -> float:
    """Shoelace area of a polygon given in counter-clockwise order."""
    if len(points) < 3:
        return 0.0
    x, y = points[:, 0], points[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def clip_polygon(subject: np.ndarray, clip: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman clipping of ``subject`` by a convex CCW ``clip`` polygon."""
    output = [tuple(p) for p in subject]
    n = len(clip)
    for i in range(n):
        if not output:
            break
        a = clip[i]
        b = clip[(i + 1) % n]
        edge = (b[0] - a[0], b[1] - a[1])
        inputs = output
        output = []

        def inside(p):
            return edge[0] * (p[1] - a[1]) - edge[1] * (p[0] - a[0]) >= 0.0

        def intersect(p, q):
            # Line through p-q crossed with the (infinite) clip edge a-b.
            dp = (q[0] - p[0], q[1] - p[1])
            denom = edge[0] * dp[1] - edge[1] * dp[0]
            num = edge[0] * (a[1] - p[1]) - edge[1] * (a[0] - p[0])
            t = num / denom
            return (p[0] + t * dp[0], p[1] + t * dp[1])

        prev = inputs[-1]
        prev_in = inside(prev)
        for cur in inputs:
            cur_in = inside(cur)
            if cur_in:
                if not prev_in:
                    output.append(intersect(prev, cur))
                output.append(cur)
            elif prev_in:
                output.append(intersect(prev, cur))
            prev, prev_in = cur, cur_in
    return np.array(output) if output else np.empty((0, 2))


def intersection_area(a: OrientedBox, b: OrientedBox) -> float:
    poly = clip_polygon(a.corners(), b.corners())
    return abs(polygon_area(poly)) if len(poly) >= 3 else 0.0


def iou(a: OrientedBox, b: OrientedBox) -> float:
    inter = intersection_area(a, b)
    union = a.area + b.area - inter
    return inter / union


def giou(a: OrientedBox, b: OrientedBox, mode: str = "rotated") -> float:
    """Generalized IoU: IoU - (C - union) / C.

    ``mode`` selects whether overlap uses the rotated polygons ("rotated",
    default) or the boxes' axis-aligned bounds ("axis_aligned").  The
    enclosure C is always the axis-aligned bounding rectangle of all corners.
    """
    axa, aya, axb, ayb = a.aabb()
    bxa, bya, bxb, byb = b.aabb()
    if mode == "rotated":
        inter = intersection_area(a, b)
        union = a.area + b.area - inter
    elif mode == "axis_aligned":
        iw = max(0.0, min(axb, bxb) - max(axa, bxa))
        ih = max(0.0, min(ayb, byb) - max(aya, bya))
        inter = iw * ih
        union = (axb - axa) * (ayb - aya) + (bxb - bxa) * (byb - bya) - inter
    else:
        raise ValueError(f"unknown giou mode '{mode}'")
    enclosure = (max(axb, bxb) - min(axa, bxa)) * (max(ayb, byb) - min(aya, bya))
    return inter / union - (enclosure - union) / enclosure


def rotate_prediction(prev: np.ndarray, predicted: np.ndarray, phi: float) -> np.ndarray:
    """Rotate a predicted position about the previous position by angle phi."""
    prev = np.asarray(prev, dtype=np.float64)
    predicted = np.asarray(predicted, dtype=np.float64)
    c, s = np.cos(phi), np.sin(phi)
    rot = np.array([[c, -s], [s, c]])
    return rot @ (predicted - prev) + prev


def turn_angle(v1: np.ndarray, v2: np.ndarray) -> float:
    """Unsigned angle between two direction vectors, in [0, pi]."""
    v1 = np.asarray(v1, dtype=np.float64)
    v2 = np.asarray(v2, dtype=np.float64)
    n1 = np.linalg.norm(v1)
    n2 = np.linalg.norm(v2)
    if n1 == 0.0 or n2 == 0.0:
        raise UndefinedAngleError("turn angle is undefined for a zero direction vector")
    cosang = np.clip(np.dot(v1, v2) / (n1 * n2), -1.0, 1.0)
    return float(np.arccos(cosang))


def signed_turn_angle(v_prev: np.ndarray, v_next: np.ndarray) -> float:
    """Turn angle with the rotation direction recovered from the 2-D cross product."""
    ang = turn_angle(v_prev, v_next)
    cross = v_prev[0] * v_next[1] - v_prev[1] * v_next[0]
    return ang if cross >= 0.0 else -ang


def wrap_angle(theta: float) -> float:
    """Wrap an angle to the interval (-pi, pi]."""
    wrapped = (theta + np.pi) % (2.0 * np.pi) - np.pi
    if wrapped == -np.pi:
        wrapped = np.pi
    return float(wrapped)
