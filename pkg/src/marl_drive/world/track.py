"""Closed race tracks: walls, ordered checkpoint gates, lap timing and the
text track file format."""
from __future__ import annotations

import math
import string
from dataclasses import dataclass, field
from importlib import resources

import numpy as np
from numba import njit
from scipy import ndimage

from .geometry import segments_intersect
from .maps import (
    MapParseError,
    _boundary_edges,
    OccupancyGrid,
    SegmentMap,
    contours,
    load_occupancy_grid,
    loop_segments,
    simplify_loop,
)

N_GATES = 19
GATE_LABELS = tuple(string.ascii_uppercase[:N_GATES])  # A..S
TRACK_MAGIC = "marl_drive-track 1"


class NotATrack(ValueError):
    """The free space of a grid does not form a closed loop."""


@dataclass(eq=False)
class RaceTrack:
    wall_loops: list            # closed polylines, each (n, 2)
    gates: np.ndarray           # (n_gates, 4) segments, driving order, gate 0 is the lap line
    start_poses: np.ndarray     # (k, 3) x, y, yaw; index 0 leads
    centerline: np.ndarray      # (m, 2) closed loop in driving order, starting at gate A
    labels: tuple = GATE_LABELS
    walls: SegmentMap = field(init=False)

    def __post_init__(self):
        self.wall_loops = [np.asarray(l, dtype=float).reshape(-1, 2) for l in self.wall_loops]
        self.gates = np.asarray(self.gates, dtype=float).reshape(-1, 4)
        self.start_poses = np.asarray(self.start_poses, dtype=float).reshape(-1, 3)
        self.centerline = np.asarray(self.centerline, dtype=float).reshape(-1, 2)
        if len(self.labels) != len(self.gates):
            raise ValueError("one label per gate required")
        self.walls = SegmentMap(loop_segments(self.wall_loops))

    @property
    def n_gates(self) -> int:
        return self.gates.shape[0]

    def first_gate_ahead(self, x: float, y: float) -> int:
        """Index of the first gate ahead of a point, measured along the centre
        line (0 when every other gate lies behind it)."""
        c = self.centerline
        s = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(c, axis=0), axis=1))])
        s_point = s[int(np.argmin(((c - (x, y)) ** 2).sum(1)))]
        for k in range(1, self.n_gates):
            mid = 0.5 * (self.gates[k, :2] + self.gates[k, 2:])
            if s[int(np.argmin(((c - mid) ** 2).sum(1)))] > s_point:
                return k
        return 0


@dataclass
class LapProgress:
    """Per-agent progress: the gate expected next and lap timing."""

    next_gate: int = 1
    lap_start: float = 0.0
    best_lap: float | None = None
    laps: int = 0
    last_lap: float | None = None

    def reset(self, time: float = 0.0, keep_best: bool = True, next_gate: int = 1) -> None:
        self.next_gate = next_gate
        self.lap_start = time
        self.laps = 0
        self.last_lap = None
        if not keep_best:
            self.best_lap = None


@njit(cache=True)
def _crosses(x0, y0, x1, y1, gate):
    return segments_intersect(x0, y0, x1, y1, gate[0], gate[1], gate[2], gate[3])


def checkpoint_crossing(prev_xy, xy, track: RaceTrack, progress: LapProgress, time: float):
    """Credit the motion segment ``prev_xy -> xy`` against the next expected gate.

    Returns ``None``, ``("checkpoint", label)``, ``("lap", lap_time)`` or
    ``("best_lap", lap_time)``; ``progress`` is updated in place.  Gates other
    than the next expected one are ignored, so skipping a gate earns nothing.
    A lap is only credited on gate A after every other gate, in order.
    """
    k = progress.next_gate
    if not _crosses(float(prev_xy[0]), float(prev_xy[1]), float(xy[0]), float(xy[1]), track.gates[k]):
        return None
    progress.next_gate = (k + 1) % track.n_gates
    if k != 0:
        return ("checkpoint", track.labels[k])
    lap_time = time - progress.lap_start
    progress.lap_start = time
    progress.laps += 1
    progress.last_lap = lap_time
    improved = progress.best_lap is not None and lap_time < progress.best_lap
    if progress.best_lap is None or improved:
        progress.best_lap = lap_time
    return ("best_lap", lap_time) if improved else ("lap", lap_time)


# --------------------------------------------------------------------------
# Conversion from an occupancy grid
# --------------------------------------------------------------------------


def _arclength(loop: np.ndarray) -> np.ndarray:
    d = np.linalg.norm(np.diff(np.vstack([loop, loop[:1]]), axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(d)])


def resample_loop(loop: np.ndarray, n: int) -> np.ndarray:
    """``n`` points evenly spaced by arc length along a closed polyline."""
    loop = np.asarray(loop, dtype=float)
    s = _arclength(loop)
    closed = np.vstack([loop, loop[:1]])
    targets = np.linspace(0.0, s[-1], n, endpoint=False)
    return np.column_stack([np.interp(targets, s, closed[:, 0]), np.interp(targets, s, closed[:, 1])])


def _signed_area(loop: np.ndarray) -> float:
    x, y = loop[:, 0], loop[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def _nearest_on_polyline(p, segs):
    a = segs[:, :2]
    d = segs[:, 2:] - a
    t = np.clip(((p - a) * d).sum(1) / np.maximum((d * d).sum(1), 1e-300), 0.0, 1.0)
    q = a + t[:, None] * d
    k = np.argmin(((q - p) ** 2).sum(1))
    return q[k]


def free_loop_walls(grid: OccupancyGrid) -> list[np.ndarray]:
    """Boundary loops of the drivable region: the largest free connected
    component that does not touch the image border and encloses a hole."""
    free = ~grid.cells
    labels, n = ndimage.label(free)
    border = set(np.unique(np.concatenate([labels[0], labels[-1], labels[:, 0], labels[:, -1]])))
    best = None
    for lab in range(1, n + 1):
        if lab in border:
            continue
        size = int((labels == lab).sum())
        if best is None or size > best[1]:
            best = (lab, size)
    if best is None:
        raise NotATrack("no enclosed free region in the grid")
    # trace the region itself, so the drivable side lies on the left of every edge
    edges = _boundary_edges(OccupancyGrid(labels == best[0], grid.resolution, grid.origin))
    loops = [simplify_loop(l) for l in contours(edges)]
    if len(loops) < 2:
        raise NotATrack("free region has no hole, so it does not form a closed loop")
    loops.sort(key=lambda l: -abs(_signed_area(l)))
    return loops


def centerline_from_walls(outer: np.ndarray, inner: np.ndarray, n: int = 400) -> np.ndarray:
    """Midpoints between evenly spaced inner-wall points and their nearest outer-wall points."""
    outer_segs = loop_segments([outer])
    pts = resample_loop(inner, n)
    mids = np.array([0.5 * (p + _nearest_on_polyline(p, outer_segs)) for p in pts])
    return resample_loop(mids, n)


def _ray_to_walls(p, direction, walls: SegmentMap, r_max=50.0):
    ang = math.atan2(direction[1], direction[0])
    t = walls.cast(p[0], p[1], [ang], r_max)[0]
    if not np.isfinite(t):
        raise NotATrack("gate ray does not reach a wall")
    return p + t * np.asarray(direction)


def track_from_grid(grid: OccupancyGrid, n_gates: int = N_GATES, start_gap: float = 1.5,
                    counter_clockwise: bool = True) -> RaceTrack:
    """Walls from the grid, gates spaced evenly along the centre line.

    Gate A sits at the centre-line point nearest the bottom-centre of the
    drivable region; the leader starts ``start_gap`` + 0.5 m past it and the
    follower 0.5 m past it.
    """
    if not (1 <= n_gates <= 26):
        raise ValueError("n_gates must lie in [1, 26]")
    loops = free_loop_walls(grid)
    outer, inner = loops[0], loops[1]
    center = centerline_from_walls(outer, inner)
    if (_signed_area(center) > 0) != counter_clockwise:
        center = center[::-1]
    lo = center.min(axis=0)
    hi = center.max(axis=0)
    anchor = np.array([0.5 * (lo[0] + hi[0]), lo[1]])
    k0 = int(np.argmin(((center - anchor) ** 2).sum(1)))
    center = np.roll(center, -k0, axis=0)
    center = resample_loop(center, len(center))

    walls = SegmentMap(loop_segments(loops))
    s = _arclength(center)
    total = s[-1]
    closed = np.vstack([center, center[:1]])

    def point_at(dist):
        dist = dist % total
        x = np.interp(dist, s, closed[:, 0])
        y = np.interp(dist, s, closed[:, 1])
        x2 = np.interp((dist + 0.05) % total, s, closed[:, 0])
        y2 = np.interp((dist + 0.05) % total, s, closed[:, 1])
        t = np.array([x2 - x, y2 - y])
        return np.array([x, y]), t / np.linalg.norm(t)

    gates = []
    for g in range(n_gates):
        p, t = point_at(g * total / n_gates)
        normal = np.array([-t[1], t[0]])
        a = _ray_to_walls(p, normal, walls)
        b = _ray_to_walls(p, -normal, walls)
        gates.append((*a, *b))
    starts = []
    for d in (0.5 + start_gap, 0.5):
        p, t = point_at(d)
        starts.append((p[0], p[1], math.atan2(t[1], t[0])))
    return RaceTrack(loops, np.array(gates), np.array(starts), center, tuple(string.ascii_uppercase[:n_gates]))


# --------------------------------------------------------------------------
# Track file I/O
# --------------------------------------------------------------------------


def _fmt(v: float) -> str:
    return repr(float(v))


def save_track(track: RaceTrack, path: str) -> None:
    lines = [TRACK_MAGIC]
    for loop in track.wall_loops:
        lines.append(f"wall {len(loop)}")
        lines += [f"{_fmt(x)} {_fmt(y)}" for x, y in loop]
    for label, g in zip(track.labels, track.gates):
        lines.append(f"gate {label} " + " ".join(_fmt(v) for v in g))
    for pose in track.start_poses:
        lines.append("start " + " ".join(_fmt(v) for v in pose))
    lines.append(f"centerline {len(track.centerline)}")
    lines += [f"{_fmt(x)} {_fmt(y)}" for x, y in track.centerline]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_track(path: str) -> RaceTrack:
    with open(path, encoding="utf-8") as fh:
        raw = fh.read().split("\n")
    rows = [(i + 1, line.split("#", 1)[0].split()) for i, line in enumerate(raw)]
    rows = [(n, toks) for n, toks in rows if toks]
    if not rows or " ".join(rows[0][1]) != TRACK_MAGIC:
        raise MapParseError(f"{path}:{rows[0][0] if rows else 1}: expected header {TRACK_MAGIC!r}")

    def floats(n, toks, count):
        if len(toks) != count:
            raise MapParseError(f"{path}:{n}: expected {count} numbers, got {len(toks)}")
        try:
            return [float(t) for t in toks]
        except ValueError:
            raise MapParseError(f"{path}:{n}: invalid number in {' '.join(toks)!r}") from None

    def block(i, n, toks):
        if len(toks) != 2 or not toks[1].isdigit():
            raise MapParseError(f"{path}:{n}: expected '{toks[0]} <count>'")
        count = int(toks[1])
        pts = []
        for j in range(count):
            if i + 1 + j >= len(rows):
                raise MapParseError(f"{path}:{n}: {toks[0]} block declares {count} points, file ends early")
            pn, ptoks = rows[i + 1 + j]
            pts.append(floats(pn, ptoks, 2))
        return np.array(pts).reshape(-1, 2), i + 1 + count

    walls, gates, labels, starts, center = [], [], [], [], None
    i = 1
    while i < len(rows):
        n, toks = rows[i]
        kind = toks[0]
        if kind == "wall":
            loop, i = block(i, n, toks)
            if len(loop) < 3:
                raise MapParseError(f"{path}:{n}: a wall loop needs at least 3 points")
            walls.append(loop)
            continue
        if kind == "centerline":
            center, i = block(i, n, toks)
            continue
        if kind == "gate":
            if len(toks) != 6:
                raise MapParseError(f"{path}:{n}: expected 'gate <label> x1 y1 x2 y2'")
            labels.append(toks[1])
            gates.append(floats(n, toks[2:], 4))
        elif kind == "start":
            starts.append(floats(n, toks[1:], 3))
        else:
            raise MapParseError(f"{path}:{n}: unknown record {kind!r}")
        i += 1
    if not walls:
        raise MapParseError(f"{path}: no wall loops")
    if not gates:
        raise MapParseError(f"{path}: no gates")
    if not starts:
        raise MapParseError(f"{path}: no start poses")
    if center is None:
        raise MapParseError(f"{path}: missing centerline block")
    return RaceTrack(walls, np.array(gates), np.array(starts), center, tuple(labels))


# --------------------------------------------------------------------------
# Bundled stadium track
# --------------------------------------------------------------------------

STADIUM = dict(half_straight=4.0, radius=3.0, width=2.0, margin=0.5, resolution=0.05)


def make_stadium_grid(half_straight=4.0, radius=3.0, width=2.0, margin=0.5, resolution=0.05) -> OccupancyGrid:
    """Stadium-shaped loop: two straights joined by semicircles.

    A cell is free when its centre lies within ``width / 2`` of the centre line
    (points at distance ``radius`` from the segment between the two arc centres).
    """
    outer = radius + 0.5 * width
    x_half = half_straight + outer + margin
    y_half = outer + margin
    nx = int(round(2 * x_half / resolution))
    ny = int(round(2 * y_half / resolution))
    cx = -x_half + (np.arange(nx) + 0.5) * resolution
    cy = y_half - (np.arange(ny) + 0.5) * resolution  # image row 0 on top
    X, Y = np.meshgrid(cx, cy)
    dist = np.hypot(X - np.clip(X, -half_straight, half_straight), Y)
    free = np.abs(dist - radius) <= 0.5 * width
    return OccupancyGrid(~free, resolution, (-x_half, -y_half))


def _data_path(name: str) -> str:
    return str(resources.files("marl_drive.data").joinpath(name))


def bundled_grid() -> OccupancyGrid:
    return load_occupancy_grid(_data_path("stadium.pgm"), _data_path("stadium.meta"))


def bundled_track() -> RaceTrack:
    return load_track(_data_path("stadium.track"))


def bundled_paths() -> dict:
    return {k: _data_path(f"stadium.{k}") for k in ("pgm", "meta", "track")}
