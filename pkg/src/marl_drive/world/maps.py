"""Wall-segment maps, occupancy grids, PGM I/O and the two ray-cast backends."""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .geometry import rect_hits_segments

NO_HIT = math.inf


class MapParseError(ValueError):
    """Malformed map input; the message names the file and line."""


# --------------------------------------------------------------------------
# Segment backend
# --------------------------------------------------------------------------


@njit(cache=True)
def _ray_segment(ox, oy, dx, dy, x1, y1, x2, y2):
    ex = x2 - x1
    ey = y2 - y1
    denom = dx * ey - dy * ex
    if abs(denom) < 1e-14:
        return np.inf  # parallel or grazing
    wx = x1 - ox
    wy = y1 - oy
    t = (wx * ey - wy * ex) / denom
    u = (wx * dy - wy * dx) / denom
    if t < 0.0 or u < 0.0 or u > 1.0:
        return np.inf
    return t


@njit(cache=True)
def _cast_brute(ox, oy, dx, dy, segs, r_max):
    best = np.inf
    for k in range(segs.shape[0]):
        t = _ray_segment(ox, oy, dx, dy, segs[k, 0], segs[k, 1], segs[k, 2], segs[k, 3])
        if t < best:
            best = t
    return best if best <= r_max else np.inf


@njit(cache=True)
def _cast_bucketed(ox, oy, dx, dy, segs, r_max, gx0, gy0, cell, nx, ny, start, items):
    """Walk the bucket grid along the ray, testing only segments stored in the
    buckets visited; stop once a hit lies inside the current bucket."""
    # clip the ray against the grid box
    t0 = 0.0
    t1 = r_max
    lo = (gx0, gy0)
    hi = (gx0 + nx * cell, gy0 + ny * cell)
    o = (ox, oy)
    d = (dx, dy)
    for a in range(2):
        if abs(d[a]) < 1e-300:
            if o[a] < lo[a] or o[a] > hi[a]:
                return np.inf
        else:
            ta = (lo[a] - o[a]) / d[a]
            tb = (hi[a] - o[a]) / d[a]
            if ta > tb:
                ta, tb = tb, ta
            t0 = max(t0, ta)
            t1 = min(t1, tb)
    if t0 > t1:
        return np.inf
    px = ox + t0 * dx
    py = oy + t0 * dy
    ix = min(max(int(math.floor((px - gx0) / cell)), 0), nx - 1)
    iy = min(max(int(math.floor((py - gy0) / cell)), 0), ny - 1)
    step_x = 1 if dx > 0 else -1
    step_y = 1 if dy > 0 else -1
    if dx != 0.0:
        nxt = gx0 + (ix + (1 if dx > 0 else 0)) * cell
        tmax_x = (nxt - ox) / dx
        tdelta_x = cell / abs(dx)
    else:
        tmax_x = np.inf
        tdelta_x = np.inf
    if dy != 0.0:
        nyt = gy0 + (iy + (1 if dy > 0 else 0)) * cell
        tmax_y = (nyt - oy) / dy
        tdelta_y = cell / abs(dy)
    else:
        tmax_y = np.inf
        tdelta_y = np.inf
    best = np.inf
    while True:
        b = iy * nx + ix
        for q in range(start[b], start[b + 1]):
            k = items[q]
            t = _ray_segment(ox, oy, dx, dy, segs[k, 0], segs[k, 1], segs[k, 2], segs[k, 3])
            if t < best:
                best = t
        t_exit = min(tmax_x, tmax_y)
        if best <= t_exit or t_exit > t1:
            break
        if tmax_x < tmax_y:
            ix += step_x
            tmax_x += tdelta_x
            if ix < 0 or ix >= nx:
                break
        else:
            iy += step_y
            tmax_y += tdelta_y
            if iy < 0 or iy >= ny:
                break
    return best if best <= r_max else np.inf


@njit(cache=True)
def _cast_segments_many(ox, oy, angles, segs, r_max, gx0, gy0, cell, nx, ny, start, items, extra):
    out = np.empty(angles.shape[0])
    for i in range(angles.shape[0]):
        dx = math.cos(angles[i])
        dy = math.sin(angles[i])
        if segs.shape[0] > 0:
            t = _cast_bucketed(ox, oy, dx, dy, segs, r_max, gx0, gy0, cell, nx, ny, start, items)
        else:
            t = np.inf
        if extra.shape[0] > 0:
            t = min(t, _cast_brute(ox, oy, dx, dy, extra, r_max))
        out[i] = t
    return out


@njit(cache=True)
def _cast_brute_many(ox, oy, angles, segs, r_max):
    # directions computed in compiled code, like _cast_segments_many, so both
    # routes see bit-identical rays
    out = np.empty(angles.shape[0])
    for i in range(angles.shape[0]):
        out[i] = _cast_brute(ox, oy, math.cos(angles[i]), math.sin(angles[i]), segs, r_max)
    return out


NO_EXTRA = np.zeros((0, 4))


@dataclass(eq=False)
class SegmentMap:
    """Static wall segments, rows (x1, y1, x2, y2) in metres."""

    walls: np.ndarray
    bucket_size: float = 0.5
    bounds: tuple = field(init=False)

    def __post_init__(self):
        walls = np.asarray(self.walls, dtype=float).reshape(-1, 4)
        if not np.all(np.isfinite(walls)):
            raise ValueError("wall segments must be finite")
        if walls.shape[0] and np.any(np.hypot(walls[:, 2] - walls[:, 0], walls[:, 3] - walls[:, 1]) <= 0.0):
            raise ValueError("wall segments must have nonzero length")
        self.walls = np.ascontiguousarray(walls)
        if walls.shape[0]:
            xs = np.concatenate([walls[:, 0], walls[:, 2]])
            ys = np.concatenate([walls[:, 1], walls[:, 3]])
            self.bounds = (float(xs.min()), float(ys.min()), float(xs.max()), float(ys.max()))
        else:
            self.bounds = (0.0, 0.0, 0.0, 0.0)
        self._build_buckets()

    def _build_buckets(self):
        cell = float(self.bucket_size)
        x0, y0, x1, y1 = self.bounds
        pad = 1e-6
        self._gx0 = x0 - pad
        self._gy0 = y0 - pad
        self._nx = max(1, int(math.ceil((x1 - x0 + 2 * pad) / cell)))
        self._ny = max(1, int(math.ceil((y1 - y0 + 2 * pad) / cell)))
        lists = [[] for _ in range(self._nx * self._ny)]
        for k, (ax, ay, bx, by) in enumerate(self.walls):
            i0 = int((min(ax, bx) - self._gx0) // cell)
            i1 = int((max(ax, bx) - self._gx0) // cell)
            j0 = int((min(ay, by) - self._gy0) // cell)
            j1 = int((max(ay, by) - self._gy0) // cell)
            for j in range(max(j0, 0), min(j1, self._ny - 1) + 1):
                for i in range(max(i0, 0), min(i1, self._nx - 1) + 1):
                    lists[j * self._nx + i].append(k)
        self._start = np.zeros(len(lists) + 1, dtype=np.int64)
        self._start[1:] = np.cumsum([len(l) for l in lists])
        self._items = np.array([k for l in lists for k in l], dtype=np.int64)
        self._cell = cell

    def __len__(self):
        return self.walls.shape[0]

    def cast(self, ox: float, oy: float, angles, r_max: float, extra=None) -> np.ndarray:
        """Distances along world-frame ``angles`` from (ox, oy); ``inf`` for no hit.

        ``extra`` holds additional (dynamic) segments tested exhaustively.
        """
        extra = NO_EXTRA if extra is None else np.ascontiguousarray(extra, dtype=float).reshape(-1, 4)
        return _cast_segments_many(float(ox), float(oy), np.ascontiguousarray(angles, dtype=float),
                                   self.walls, float(r_max), self._gx0, self._gy0, self._cell,
                                   self._nx, self._ny, self._start, self._items, extra)

    def cast_brute(self, ox, oy, angles, r_max, extra=None) -> np.ndarray:
        """Exhaustive version of :meth:`cast`, kept as a cross-check."""
        segs = self.walls if extra is None else np.vstack([self.walls, np.reshape(extra, (-1, 4))])
        angles = np.ascontiguousarray(np.atleast_1d(angles), dtype=float)
        return _cast_brute_many(float(ox), float(oy), angles, np.ascontiguousarray(segs, dtype=float), float(r_max))

    def collides(self, corners: np.ndarray) -> bool:
        return bool(self.walls.shape[0] and rect_hits_segments(corners, self.walls))


def raycast(origin, direction, world, r_max: float) -> float:
    """Distance from ``origin`` along unit ``direction`` to the first wall, or ``inf``.

    ``world`` may be a :class:`SegmentMap` (exact ray-segment backend) or an
    :class:`OccupancyGrid` (DDA cell traversal).
    """
    dx, dy = float(direction[0]), float(direction[1])
    if abs(math.hypot(dx, dy) - 1.0) > 1e-9:
        raise ValueError("direction must be a unit vector")
    return float(world.cast(origin[0], origin[1], [math.atan2(dy, dx)], r_max)[0])


# --------------------------------------------------------------------------
# Occupancy grid
# --------------------------------------------------------------------------


@njit(cache=True)
def _cast_grid_many(ox, oy, angles, occ, res, x0, y0, r_max):
    # occ[j, i]: j counts rows upward from the bottom edge
    ny, nx = occ.shape
    out = np.empty(angles.shape[0])
    for a in range(angles.shape[0]):
        dx = math.cos(angles[a])
        dy = math.sin(angles[a])
        out[a] = _cast_grid(ox, oy, dx, dy, occ, res, x0, y0, r_max, nx, ny)
    return out


@njit(cache=True)
def _cast_grid(ox, oy, dx, dy, occ, res, x0, y0, r_max, nx, ny):
    # enter the grid box first
    t0 = 0.0
    t1 = r_max
    o = (ox - x0, oy - y0)
    d = (dx, dy)
    hi = (nx * res, ny * res)
    for k in range(2):
        if abs(d[k]) < 1e-300:
            if o[k] < 0.0 or o[k] > hi[k]:
                return np.inf
        else:
            ta = (0.0 - o[k]) / d[k]
            tb = (hi[k] - o[k]) / d[k]
            if ta > tb:
                ta, tb = tb, ta
            t0 = max(t0, ta)
            t1 = min(t1, tb)
    if t0 > t1:
        return np.inf
    px = o[0] + t0 * dx
    py = o[1] + t0 * dy
    i = min(max(int(math.floor(px / res)), 0), nx - 1)
    j = min(max(int(math.floor(py / res)), 0), ny - 1)
    step_i = 1 if dx > 0 else -1
    step_j = 1 if dy > 0 else -1
    if dx != 0.0:
        tmax_x = ((i + (1 if dx > 0 else 0)) * res - o[0]) / dx
        tdx = res / abs(dx)
    else:
        tmax_x = np.inf
        tdx = np.inf
    if dy != 0.0:
        tmax_y = ((j + (1 if dy > 0 else 0)) * res - o[1]) / dy
        tdy = res / abs(dy)
    else:
        tmax_y = np.inf
        tdy = np.inf
    t_entry = t0
    while True:
        if occ[j, i]:
            return t_entry if t_entry <= r_max else np.inf
        if tmax_x < tmax_y:
            t_entry = tmax_x
            i += step_i
            tmax_x += tdx
            if i < 0 or i >= nx:
                return np.inf
        else:
            t_entry = tmax_y
            j += step_j
            tmax_y += tdy
            if j < 0 or j >= ny:
                return np.inf
        if t_entry > r_max:
            return np.inf


@dataclass(eq=False)
class OccupancyGrid:
    """Binary occupancy raster.

    ``cells[r, c]`` follows image order: row 0 is the TOP row.  ``origin`` is the
    world position of the bottom-left corner of the bottom-left cell, so cell
    (r, c) spans x in [ox + c*res, ox + (c+1)*res] and
    y in [oy + (H-1-r)*res, oy + (H-r)*res].
    """

    cells: np.ndarray
    resolution: float
    origin: tuple = (0.0, 0.0)

    def __post_init__(self):
        cells = np.asarray(self.cells).astype(bool)
        if cells.ndim != 2 or cells.shape[0] < 1 or cells.shape[1] < 1:
            raise ValueError("occupancy grid must be a non-empty 2-D array")
        if not (self.resolution > 0):
            raise ValueError("resolution must be > 0")
        self.cells = cells
        self.resolution = float(self.resolution)
        self.origin = (float(self.origin[0]), float(self.origin[1]))
        self._bottom_up = np.ascontiguousarray(cells[::-1])

    @property
    def height(self) -> int:
        return self.cells.shape[0]

    @property
    def width(self) -> int:
        return self.cells.shape[1]

    def cell_bounds(self, r: int, c: int) -> tuple[float, float, float, float]:
        res = self.resolution
        ox, oy = self.origin
        return (ox + c * res, oy + (self.height - 1 - r) * res, ox + (c + 1) * res, oy + (self.height - r) * res)

    def world_to_cell(self, x: float, y: float) -> tuple[int, int]:
        c = int(math.floor((x - self.origin[0]) / self.resolution))
        j = int(math.floor((y - self.origin[1]) / self.resolution))
        return self.height - 1 - j, c

    def occupied_at(self, x: float, y: float) -> bool:
        r, c = self.world_to_cell(x, y)
        if 0 <= r < self.height and 0 <= c < self.width:
            return bool(self.cells[r, c])
        return False

    def cast(self, ox, oy, angles, r_max, extra=None) -> np.ndarray:
        out = _cast_grid_many(float(ox), float(oy), np.ascontiguousarray(angles, dtype=float),
                              self._bottom_up, self.resolution, self.origin[0], self.origin[1], float(r_max))
        if extra is not None and len(extra):
            extra = np.ascontiguousarray(extra, dtype=float).reshape(-1, 4)
            for k, a in enumerate(np.atleast_1d(angles)):
                out[k] = min(out[k], _cast_brute(float(ox), float(oy), math.cos(a), math.sin(a), extra, float(r_max)))
        return out

    def collides(self, corners: np.ndarray) -> bool:
        """Rectangle overlaps an occupied cell (tested via the cell edges)."""
        r0, r1, c0, c1 = self._cell_window(corners)
        if r0 > r1 or c0 > c1:
            return False
        sub = self.cells[r0:r1 + 1, c0:c1 + 1]
        if not sub.any():
            return False
        segs = []
        for r, c in zip(*np.nonzero(sub)):
            x0, y0, x1, y1 = self.cell_bounds(r + r0, c + c0)
            segs += [(x0, y0, x1, y0), (x1, y0, x1, y1), (x1, y1, x0, y1), (x0, y1, x0, y0)]
        return bool(rect_hits_segments(corners, np.array(segs)))

    def _cell_window(self, corners):
        xs, ys = corners[:, 0], corners[:, 1]
        r_a, c_a = self.world_to_cell(xs.min(), ys.max())
        r_b, c_b = self.world_to_cell(xs.max(), ys.min())
        return max(r_a, 0), min(r_b, self.height - 1), max(c_a, 0), min(c_b, self.width - 1)


# --------------------------------------------------------------------------
# PGM + metadata I/O
# --------------------------------------------------------------------------

REQUIRED_META = ("resolution", "origin_x", "origin_y")


def _pgm_tokens(data: bytes, path: str, count: int):
    """Read ``count`` header tokens, skipping comments; returns tokens, end offset
    and the line number of each token."""
    tokens = []
    pos = 0
    line = 1
    n = len(data)
    while len(tokens) < count:
        while pos < n and data[pos:pos + 1].isspace():
            if data[pos] == 10:
                line += 1
            pos += 1
        if pos >= n:
            raise MapParseError(f"{path}:{line}: truncated PGM header")
        if data[pos:pos + 1] == b"#":
            while pos < n and data[pos] != 10:
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        tokens.append((data[start:pos].decode("ascii", "replace"), line))
    return tokens, pos, line


def read_pgm(path: str) -> np.ndarray:
    """Read a P2 (ASCII) or P5 (binary) PGM into a uint16 array, row 0 on top."""
    with open(path, "rb") as fh:
        data = fh.read()
    tokens, pos, line = _pgm_tokens(data, path, 4)
    magic, mline = tokens[0]
    if magic not in ("P2", "P5"):
        raise MapParseError(f"{path}:{mline}: expected PGM magic P2 or P5, got {magic!r}")
    try:
        width, height, maxval = (int(t) for t, _ in tokens[1:])
    except ValueError:
        bad = next((t, l) for t, l in tokens[1:] if not t.isdigit())
        raise MapParseError(f"{path}:{bad[1]}: invalid PGM header value {bad[0]!r}") from None
    if width < 1 or height < 1 or not (0 < maxval < 65536):
        raise MapParseError(f"{path}:{tokens[1][1]}: invalid PGM dimensions or maxval")
    count = width * height
    if magic == "P5":
        pos += 1  # single whitespace after maxval
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        raw = data[pos:pos + count * dtype.itemsize]
        if len(raw) != count * dtype.itemsize:
            raise MapParseError(f"{path}:{line}: pixel data holds {len(raw) // dtype.itemsize} values, "
                                f"header declares {width}x{height}")
        pixels = np.frombuffer(raw, dtype=dtype).astype(np.uint16)
    else:
        body = data[pos:].decode("ascii", "replace")
        values = []
        last = line
        for k, text in enumerate(body.split("\n")):
            text = text.split("#", 1)[0]
            for tok in text.split():
                if not tok.isdigit():
                    raise MapParseError(f"{path}:{line + k}: invalid pixel value {tok!r}")
                values.append(int(tok))
                last = line + k
                if len(values) == count + 1:
                    raise MapParseError(f"{path}:{last}: more pixel values than the declared {width}x{height}")
        if len(values) != count:
            raise MapParseError(f"{path}:{last}: pixel data holds {len(values)} values, header declares {width}x{height}")
        pixels = np.array(values, dtype=np.uint16)
    if pixels.max(initial=0) > maxval:
        raise MapParseError(f"{path}:{line}: pixel value exceeds maxval {maxval}")
    return pixels.reshape(height, width), maxval


def write_pgm(path: str, pixels: np.ndarray, maxval: int = 255, binary: bool = True) -> None:
    pixels = np.asarray(pixels)
    h, w = pixels.shape
    header = f"{'P5' if binary else 'P2'}\n{w} {h}\n{maxval}\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        if binary:
            fh.write(pixels.astype(">u2" if maxval > 255 else "u1").tobytes())
        else:
            for row in pixels:
                fh.write((" ".join(str(int(v)) for v in row) + "\n").encode("ascii"))


def read_metadata(path: str) -> dict:
    """``key: value`` lines; ``#`` starts a comment."""
    meta = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            text = raw.split("#", 1)[0].strip()
            if not text:
                continue
            if ":" not in text:
                raise MapParseError(f"{path}:{lineno}: expected 'key: value', got {text!r}")
            key, value = (s.strip() for s in text.split(":", 1))
            try:
                meta[key] = float(value)
            except ValueError:
                raise MapParseError(f"{path}:{lineno}: value for {key!r} is not a number: {value!r}") from None
            meta.setdefault("_lines", {})[key] = lineno
    for key in REQUIRED_META:
        if key not in meta:
            raise MapParseError(f"{path}:{lineno if meta else 1}: missing required key {key!r}")
    return meta


def load_occupancy_grid(image_path: str, meta_path: str | None = None) -> OccupancyGrid:
    """Load a PGM + metadata pair.

    A pixel is occupied when its darkness (maxval - value) / maxval exceeds
    ``occupied_thresh`` (default 0.5).  ``meta_path`` defaults to the image path
    with a ``.meta`` suffix.
    """
    if meta_path is None:
        meta_path = os.path.splitext(image_path)[0] + ".meta"
    pixels, maxval = read_pgm(image_path)
    meta = read_metadata(meta_path)
    thresh = meta.get("occupied_thresh", 0.5)
    if not (0.0 <= thresh <= 1.0):
        raise MapParseError(f"{meta_path}:{meta['_lines']['occupied_thresh']}: occupied_thresh must lie in [0, 1]")
    if meta["resolution"] <= 0:
        raise MapParseError(f"{meta_path}:{meta['_lines']['resolution']}: resolution must be > 0")
    darkness = (maxval - pixels.astype(float)) / maxval
    return OccupancyGrid(darkness > thresh, meta["resolution"], (meta["origin_x"], meta["origin_y"]))


def save_occupancy_grid(grid: OccupancyGrid, image_path: str, meta_path: str | None = None,
                        binary: bool = True) -> None:
    if meta_path is None:
        meta_path = os.path.splitext(image_path)[0] + ".meta"
    write_pgm(image_path, np.where(grid.cells, 0, 255), 255, binary)
    with open(meta_path, "w", encoding="utf-8") as fh:
        fh.write(f"resolution: {grid.resolution!r}\n")
        fh.write(f"origin_x: {grid.origin[0]!r}\n")
        fh.write(f"origin_y: {grid.origin[1]!r}\n")
        fh.write("occupied_thresh: 0.5\n")


# --------------------------------------------------------------------------
# Grid -> wall segments
# --------------------------------------------------------------------------


def grid_to_segments(grid: OccupancyGrid) -> SegmentMap:
    """One wall segment per cell edge separating an occupied cell from free space
    (cells beyond the grid count as free).

    Segments are directed so the occupied cell lies on their left; consecutive
    segments chain into closed contours (see :func:`contours`).
    """
    return SegmentMap(_boundary_edges(grid))


def _boundary_edges(grid: OccupancyGrid) -> np.ndarray:
    occ = np.pad(grid.cells, 1, constant_values=False)
    h, w = grid.cells.shape
    res = grid.resolution
    ox, oy = grid.origin
    edges = []
    # vertex (r, c) of the image lattice sits at x = ox + c*res, y = oy + (h - r)*res
    X = lambda c: ox + c * res
    Y = lambda r: oy + (h - r) * res
    for r in range(h):
        for c in range(w):
            if not occ[r + 1, c + 1]:
                continue
            if not occ[r, c + 1]:      # free above: top edge, walking -x keeps the cell on the left
                edges.append((X(c + 1), Y(r), X(c), Y(r)))
            if not occ[r + 2, c + 1]:  # free below
                edges.append((X(c), Y(r + 1), X(c + 1), Y(r + 1)))
            if not occ[r + 1, c]:      # free to the left
                edges.append((X(c), Y(r), X(c), Y(r + 1)))
            if not occ[r + 1, c + 2]:  # free to the right
                edges.append((X(c + 1), Y(r + 1), X(c + 1), Y(r)))
    return np.array(edges, dtype=float).reshape(-1, 4)


def contours(walls: np.ndarray, tol: float = 1e-9) -> list[np.ndarray]:
    """Chain directed segments into closed loops; returns one (n, 2) vertex
    array per loop (first vertex not repeated).

    Where two loops touch at a vertex the sharpest left turn is taken, which
    keeps diagonal-touching occupied cells in separate contours.
    """
    walls = np.asarray(walls, dtype=float)
    key = lambda x, y: (round(x / tol), round(y / tol)) if tol else (x, y)
    outgoing: dict = {}
    for k, (x1, y1, x2, y2) in enumerate(walls):
        outgoing.setdefault(key(x1, y1), []).append(k)
    used = np.zeros(len(walls), dtype=bool)
    loops = []
    for k0 in range(len(walls)):
        if used[k0]:
            continue
        loop = []
        k = k0
        while not used[k]:
            used[k] = True
            x1, y1, x2, y2 = walls[k]
            loop.append((x1, y1))
            cands = [j for j in outgoing.get(key(x2, y2), []) if not used[j]]
            if not cands:
                break
            if len(cands) > 1:
                hx, hy = x2 - x1, y2 - y1
                def turn(j):
                    a, b, c, d = walls[j]
                    cx, cy = c - a, d - b
                    return math.atan2(hx * cy - hy * cx, hx * cx + hy * cy)
                cands.sort(key=turn, reverse=True)
            k = cands[0]
        loops.append(np.array(loop))
    return loops


def simplify_loop(loop: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Drop vertices that lie on the straight line through their neighbours."""
    pts = np.asarray(loop, dtype=float)
    keep = []
    n = len(pts)
    for i in range(n):
        a, b, c = pts[i - 1], pts[i], pts[(i + 1) % n]
        cross = (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0])
        if abs(cross) > tol:
            keep.append(b)
    return np.array(keep)


def loop_segments(loops) -> np.ndarray:
    segs = []
    for loop in loops:
        loop = np.asarray(loop, dtype=float)
        nxt = np.roll(loop, -1, axis=0)
        segs.append(np.hstack([loop, nxt]))
    return np.vstack(segs) if segs else np.zeros((0, 4))
