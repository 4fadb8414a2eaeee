"""Planar geometry primitives shared by the collision, lane and ray queries."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

EPS = 1e-12


@dataclass(frozen=True)
class Footprint:
    """Oriented rectangle: centre (x, y), heading ``yaw``, ``length`` along the heading."""

    x: float
    y: float
    yaw: float
    length: float
    width: float

    def __post_init__(self):
        if not (self.length > 0 and self.width > 0):
            raise ValueError("footprint extents must be positive")

    def corners(self) -> np.ndarray:
        """(4, 2) corners in counter-clockwise order starting front-left."""
        return rect_corners(self.x, self.y, self.yaw, self.length, self.width)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.yaw, self.length, self.width])

    @classmethod
    def of_vehicle(cls, state, params) -> "Footprint":
        length, width = params.footprint_size
        return cls(state.x, state.y, state.yaw, length, width)


@njit(cache=True)
def rect_corners(x, y, yaw, length, width):
    c = math.cos(yaw)
    s = math.sin(yaw)
    hl = 0.5 * length
    hw = 0.5 * width
    out = np.empty((4, 2))
    # front-left, rear-left, rear-right, front-right: counter-clockwise
    lx = (hl, -hl, -hl, hl)
    ly = (hw, hw, -hw, -hw)
    for i in range(4):
        out[i, 0] = x + c * lx[i] - s * ly[i]
        out[i, 1] = y + s * lx[i] + c * ly[i]
    return out


@njit(cache=True)
def _project(corners, ax, ay):
    lo = np.inf
    hi = -np.inf
    for i in range(corners.shape[0]):
        p = corners[i, 0] * ax + corners[i, 1] * ay
        lo = min(lo, p)
        hi = max(hi, p)
    return lo, hi


@njit(cache=True)
def rects_overlap(a, b):
    """Separating-axis test for two convex quadrilaterals given as (4, 2) corners.

    Touching counts as overlap; the test is symmetric in its arguments.
    """
    for poly in (a, b):
        for i in range(2):
            ex = poly[i + 1, 0] - poly[i, 0]
            ey = poly[i + 1, 1] - poly[i, 1]
            # edge normal
            ax = -ey
            ay = ex
            lo_a, hi_a = _project(a, ax, ay)
            lo_b, hi_b = _project(b, ax, ay)
            if hi_a < lo_b or hi_b < lo_a:
                return False
    return True


@njit(cache=True)
def _orient(ax, ay, bx, by, cx, cy):
    return (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)


@njit(cache=True)
def _on_segment(ax, ay, bx, by, px, py):
    return min(ax, bx) - EPS <= px <= max(ax, bx) + EPS and min(ay, by) - EPS <= py <= max(ay, by) + EPS


@njit(cache=True)
def segments_intersect(ax, ay, bx, by, cx, cy, dx, dy):
    """Closed-segment intersection test (touching counts)."""
    d1 = _orient(cx, cy, dx, dy, ax, ay)
    d2 = _orient(cx, cy, dx, dy, bx, by)
    d3 = _orient(ax, ay, bx, by, cx, cy)
    d4 = _orient(ax, ay, bx, by, dx, dy)
    if ((d1 > 0 and d2 < 0) or (d1 < 0 and d2 > 0)) and ((d3 > 0 and d4 < 0) or (d3 < 0 and d4 > 0)):
        return True
    if d1 == 0 and _on_segment(cx, cy, dx, dy, ax, ay):
        return True
    if d2 == 0 and _on_segment(cx, cy, dx, dy, bx, by):
        return True
    if d3 == 0 and _on_segment(ax, ay, bx, by, cx, cy):
        return True
    if d4 == 0 and _on_segment(ax, ay, bx, by, dx, dy):
        return True
    return False


@njit(cache=True)
def segments_cross(ax, ay, bx, by, cx, cy, dx, dy):
    """Proper crossing: each segment strictly separates the other's endpoints."""
    d1 = _orient(cx, cy, dx, dy, ax, ay)
    d2 = _orient(cx, cy, dx, dy, bx, by)
    d3 = _orient(ax, ay, bx, by, cx, cy)
    d4 = _orient(ax, ay, bx, by, dx, dy)
    return d1 * d2 < 0 and d3 * d4 < 0


@njit(cache=True)
def point_in_convex(poly, px, py):
    """Point inside (or on) a counter-clockwise convex polygon."""
    n = poly.shape[0]
    for i in range(n):
        j = (i + 1) % n
        if _orient(poly[i, 0], poly[i, 1], poly[j, 0], poly[j, 1], px, py) < -EPS:
            return False
    return True


@njit(cache=True)
def point_in_polygon(poly, px, py):
    """Even-odd rule; points on the boundary count as inside."""
    n = poly.shape[0]
    inside = False
    for i in range(n):
        j = (i + 1) % n
        x1, y1 = poly[i, 0], poly[i, 1]
        x2, y2 = poly[j, 0], poly[j, 1]
        if abs(_orient(x1, y1, x2, y2, px, py)) <= EPS and _on_segment(x1, y1, x2, y2, px, py):
            return True
        if (y1 > py) != (y2 > py):
            xc = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
            if px < xc:
                inside = not inside
    return inside


@njit(cache=True)
def rect_hits_segments(corners, segs):
    """True if the rectangle overlaps any segment (rows x1, y1, x2, y2)."""
    xmin = corners[:, 0].min()
    xmax = corners[:, 0].max()
    ymin = corners[:, 1].min()
    ymax = corners[:, 1].max()
    for k in range(segs.shape[0]):
        x1, y1, x2, y2 = segs[k, 0], segs[k, 1], segs[k, 2], segs[k, 3]
        if max(x1, x2) < xmin or min(x1, x2) > xmax or max(y1, y2) < ymin or min(y1, y2) > ymax:
            continue
        if point_in_convex(corners, x1, y1) or point_in_convex(corners, x2, y2):
            return True
        for i in range(4):
            j = (i + 1) % 4
            if segments_intersect(corners[i, 0], corners[i, 1], corners[j, 0], corners[j, 1], x1, y1, x2, y2):
                return True
    return False


@njit(cache=True)
def rect_inside_polygon(corners, poly):
    """Rectangle contained in a simple polygon (boundary contact allowed)."""
    for i in range(4):
        if not point_in_polygon(poly, corners[i, 0], corners[i, 1]):
            return False
    n = poly.shape[0]
    for i in range(4):
        j = (i + 1) % 4
        for k in range(n):
            m = (k + 1) % n
            if segments_cross(corners[i, 0], corners[i, 1], corners[j, 0], corners[j, 1],
                              poly[k, 0], poly[k, 1], poly[m, 0], poly[m, 1]):
                return False
    return True


def collide_vehicles(a: Footprint, b: Footprint) -> bool:
    """Separating-axis overlap test of two footprints."""
    return bool(rects_overlap(a.corners(), b.corners()))
