"""Four-way, four-lane intersection with right-hand traffic.

Layout (centre at the origin): arms point south, east, north and west (index
0..3).  Each arm carries two inbound lanes on its right-hand side and two
outbound lanes on the other side of the centre line.  The square box where the
roads cross has half-size ``2 * lane_width``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..dynamics import wrap_angle
from .geometry import Footprint, rect_inside_polygon
from .maps import SegmentMap

ARMS = ("south", "east", "north", "west")
ROUTES = ("straight", "left", "right")

# unit vector from the centre out along each arm, and the CCW walking
# direction of the box side that the arm attaches to
_OUT = np.array([[0.0, -1.0], [1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]])
_SIDE = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]])


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class IntersectionConfig:
    lane_width: float = 0.3
    arm_length: float = 2.0
    spawn_margin: float = 0.25  # spawn distance back from the arm's open end
    goal_depth: float = 0.5     # goal position as a fraction of the exit arm length

    def validate(self, vehicle_width: float | None = None) -> None:
        if not (self.lane_width > 0 and self.arm_length > 0):
            raise ConfigError("lane_width and arm_length must be > 0")
        if not (0 < self.spawn_margin < self.arm_length):
            raise ConfigError("spawn_margin must lie in (0, arm_length)")
        if not (0 < self.goal_depth <= 1):
            raise ConfigError("goal_depth must lie in (0, 1]")
        if vehicle_width is not None and self.lane_width <= vehicle_width:
            raise ConfigError(f"lane_width {self.lane_width} must exceed vehicle width {vehicle_width}")


def route_goal_arm(spawn_arm: int, route: str) -> int:
    """Arm on which a vehicle entering from ``spawn_arm`` leaves the box."""
    if route not in ROUTES:
        raise ConfigError(f"unknown route {route!r}; choose from {ROUTES}")
    # entering from the south heading north: left -> west, right -> east
    offset = {"straight": 2, "left": 3, "right": 1}[route]
    return (spawn_arm + offset) % 4


@dataclass(eq=False)
class IntersectionMap:
    config: IntersectionConfig
    half_box: float
    spawn_poses: np.ndarray      # (4, 3) x, y, yaw, inner inbound lane of each arm
    goal_points: np.ndarray      # (4, 2) inner outbound lane of each arm
    boundaries: np.ndarray       # (20, 4) lane boundary segments, 5 per arm
    walls: SegmentMap            # outer road edges (8 segments)
    _envelopes: dict = field(default_factory=dict, repr=False)

    @property
    def lane_width(self) -> float:
        return self.config.lane_width

    @property
    def arm_length(self) -> float:
        return self.config.arm_length

    def goal_for(self, spawn_arm: int, route: str) -> np.ndarray:
        return self.goal_points[route_goal_arm(spawn_arm, route)].copy()

    def lane_center(self, arm: int, inbound: bool, lane: int = 0) -> tuple[np.ndarray, np.ndarray]:
        """(point on centre line, unit travel direction) of a lane; ``lane`` 0 is
        next to the centre line."""
        offset = (lane + 0.5) * self.lane_width
        side = _SIDE[arm]
        if inbound:
            return offset * side, -_OUT[arm].copy()
        return -offset * side, _OUT[arm].copy()

    def route_polygon(self, spawn_arm: int, goal_arm: int) -> np.ndarray:
        """Legal area for a route: inbound half of the spawn arm, the box, and
        the outbound half of the goal arm, as a counter-clockwise polygon."""
        key = (spawn_arm, goal_arm)
        if key not in self._envelopes:
            self._envelopes[key] = self._build_envelope(spawn_arm, goal_arm)
        return self._envelopes[key]

    def _build_envelope(self, spawn_arm, goal_arm):
        hb = self.half_box
        arm = self.arm_length
        pts = []
        for k in range(4):
            d, n = _SIDE[k], _OUT[k]
            start = -hb * d + hb * n
            pts.append(start)
            spans = []
            if k == goal_arm:
                spans.append((0.0, hb))        # outbound half: first half of the walk
            if k == spawn_arm:
                spans.append((hb, 2 * hb))     # inbound half: second half
            if len(spans) == 2:
                spans = [(0.0, 2 * hb)]  # U-turn: the whole arm is legal
            for s0, s1 in spans:
                pts += [start + s0 * d, start + s0 * d + arm * n, start + s1 * d + arm * n, start + s1 * d]
        poly = [pts[0]]
        for p in pts[1:]:
            if np.linalg.norm(p - poly[-1]) > 1e-12:
                poly.append(p)
        if np.linalg.norm(poly[0] - poly[-1]) <= 1e-12:
            poly.pop()
        return np.ascontiguousarray(poly, dtype=float)


def build_intersection(config: IntersectionConfig | None = None) -> IntersectionMap:
    """Deterministic geometry from ``lane_width`` and ``arm_length``."""
    cfg = config or IntersectionConfig()
    cfg.validate()
    lw = cfg.lane_width
    hw = 2.0 * lw           # half road width
    hb = hw                 # half size of the crossing box
    far = hb + cfg.arm_length
    spawn = np.zeros((4, 3))
    goals = np.zeros((4, 2))
    boundaries = []
    walls = []
    for k in range(4):
        out, side = _OUT[k], _SIDE[k]
        inward = -out
        p = (0.5 * lw) * side + (far - cfg.spawn_margin) * out
        spawn[k] = (p[0], p[1], wrap_angle(math.atan2(inward[1], inward[0])) + 0.0)
        goals[k] = (-0.5 * lw) * side + (hb + cfg.goal_depth * cfg.arm_length) * out
        for offset in (-hw, -lw, 0.0, lw, hw):
            a = offset * side + hb * out
            b = offset * side + far * out
            boundaries.append((a[0], a[1], b[0], b[1]))
            if abs(offset) == hw:
                walls.append((a[0], a[1], b[0], b[1]))
    return IntersectionMap(cfg, hb, spawn, goals, np.array(boundaries), SegmentMap(np.array(walls)))


def lane_violation(fp: Footprint, imap: IntersectionMap, spawn_arm: int, goal_arm: int) -> bool:
    """True when the footprint leaves its route envelope, i.e. crosses a lane
    boundary that is not part of the legal route."""
    return not rect_inside_polygon(fp.corners(), imap.route_polygon(spawn_arm, goal_arm))
