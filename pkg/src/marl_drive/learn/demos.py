"""Scripted demonstrations: a pure-pursuit driver and lap recording."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from ..dynamics import S_VX, S_X, S_Y, S_YAW, VehicleParams
from ..envs.race import STEER_LEVELS, THROTTLE_LEVELS, RaceEnv, RaceEnvConfig


class DemoFailure(RuntimeError):
    """The scripted driver crashed or ran out of steps before finishing a lap."""


@dataclass(frozen=True)
class PursuitConfig:
    lookahead_base: float = 0.6      # m
    lookahead_gain: float = 0.2      # extra lookahead per m/s
    max_lateral_accel: float = 4.0   # m/s^2, sets the cornering speed
    braking_decel: float = 3.0       # m/s^2 assumed when previewing corners
    preview: float = 1.0             # m of centre line scanned beyond braking distance
    speed_gain: float = 0.5          # throttle per m/s of speed error
    max_speed: float = 2.5           # m/s cap on the target speed


class Centerline:
    """Closed polyline with arc length and a discrete curvature estimate."""

    def __init__(self, points, curvature_span: float = 0.5):
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        if len(pts) < 3:
            raise ValueError("a centre line needs at least 3 points")
        self.points = pts
        seg = np.linalg.norm(np.roll(pts, -1, axis=0) - pts, axis=1)
        self.s = np.concatenate([[0.0], np.cumsum(seg)])
        self.length = float(self.s[-1])
        self.spacing = self.length / len(pts)
        # circle through points ``span`` apart on either side: robust to the
        # pixel-scale jitter of centre lines extracted from grids
        k = max(1, int(round(curvature_span / self.spacing)))
        prev, nxt = np.roll(pts, k, axis=0), np.roll(pts, -k, axis=0)
        a = np.linalg.norm(pts - prev, axis=1)
        b = np.linalg.norm(nxt - pts, axis=1)
        c = np.linalg.norm(nxt - prev, axis=1)
        cross = (pts[:, 0] - prev[:, 0]) * (nxt[:, 1] - pts[:, 1]) - (pts[:, 1] - prev[:, 1]) * (nxt[:, 0] - pts[:, 0])
        # signed curvature of the circle through three consecutive points
        self.curvature = 2.0 * cross / np.maximum(a * b * c, 1e-12)

    def nearest(self, x: float, y: float) -> int:
        return int(np.argmin((self.points[:, 0] - x) ** 2 + (self.points[:, 1] - y) ** 2))

    def ahead(self, i: int, dist: float) -> np.ndarray:
        target = (self.s[i] + dist) % self.length
        j = int(np.searchsorted(self.s, target, side="right") - 1) % len(self.points)
        k = (j + 1) % len(self.points)
        seg = self.s[j + 1] - self.s[j]
        t = (target - self.s[j]) / seg if seg > 0 else 0.0
        return (1 - t) * self.points[j] + t * self.points[k]


def pure_pursuit(pose, speed: float, centerline, params: VehicleParams,
                 config: PursuitConfig | None = None) -> tuple[float, float]:
    """Continuous (throttle in [0, 1], steering angle in rad; positive steers right).

    Steers along the circular arc through the lookahead point on the centre
    line; the target speed is the cornering speed of the tightest curvature
    within the preview distance.
    """
    cfg = config or PursuitConfig()
    line = centerline if isinstance(centerline, Centerline) else Centerline(centerline)
    x, y, yaw = pose
    i = line.nearest(x, y)
    look = cfg.lookahead_base + cfg.lookahead_gain * max(speed, 0.0)
    gx, gy = line.ahead(i, look)
    c, s = math.cos(yaw), math.sin(yaw)
    lx = c * (gx - x) + s * (gy - y)
    ly = -s * (gx - x) + c * (gy - y)
    kappa = 2.0 * ly / max(lx * lx + ly * ly, 1e-9)  # > 0 means the point is to the left
    steer = -math.atan(params.wheelbase * kappa)
    steer = float(np.clip(steer, -params.steer_limit, params.steer_limit))

    horizon = cfg.preview + max(speed, 0.0) ** 2 / (2.0 * cfg.braking_decel)
    n = max(1, int(math.ceil(horizon / line.spacing)))
    idx = (i + np.arange(n)) % len(line.points)
    k_max = float(np.max(np.abs(line.curvature[idx])))
    v_cap = min(params.top_speed, cfg.max_speed)
    v_target = v_cap if k_max < 1e-9 else min(v_cap, math.sqrt(cfg.max_lateral_accel / k_max))
    throttle = v_target / params.top_speed + cfg.speed_gain * (v_target - speed)
    return float(np.clip(throttle, 0.0, 1.0)), steer


def discretize_race_action(throttle: float, steering: float, params: VehicleParams) -> np.ndarray:
    """Nearest legal (throttle level, steering direction) as head indices."""
    ti = int(np.argmin([abs(throttle - t) for t in THROTTLE_LEVELS]))
    di = int(np.argmin([abs(steering / params.steer_limit - d) for d in STEER_LEVELS]))
    return np.array([ti, di], dtype=np.int64)


@dataclass
class DemoDataset:
    """(observation, action-index) pairs grouped by episode (one lap each)."""

    obs: np.ndarray                       # (n, obs_dim)
    actions: np.ndarray                   # (n, n_heads) head indices
    episode: np.ndarray                   # (n,) episode index of each transition
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.obs = np.atleast_2d(np.asarray(self.obs, dtype=float))
        self.actions = np.asarray(self.actions, dtype=np.int64)
        if self.actions.ndim == 1:
            self.actions = self.actions[:, None]
        self.episode = np.asarray(self.episode, dtype=np.int64).reshape(-1)
        if not (len(self.obs) == len(self.actions) == len(self.episode)):
            raise ValueError("observations, actions and episode ids must have equal lengths")

    def __len__(self) -> int:
        return len(self.obs)

    @property
    def n_episodes(self) -> int:
        return int(self.metadata.get("episodes", len(np.unique(self.episode))))

    def split(self, holdout_fraction: float, rng: np.random.Generator):
        """Random (train, held-out) split of the transitions."""
        perm = rng.permutation(len(self))
        n_hold = int(round(holdout_fraction * len(self)))
        hold, train = perm[:n_hold], perm[n_hold:]
        return (self.obs[train], self.actions[train]), (self.obs[hold], self.actions[hold])


def driver_config_for(seed: int, base: PursuitConfig | None = None) -> PursuitConfig:
    """Seed-dependent driver: the lookahead varies by up to ±15 % so that
    independently recorded datasets differ."""
    base = base or PursuitConfig()
    u = np.random.default_rng(seed).uniform(-1.0, 1.0)
    return replace(base, lookahead_base=base.lookahead_base * (1.0 + 0.15 * u))


def record_demos(laps: int, seed: int = 0, start_slot: int = 0, env_config: RaceEnvConfig | None = None,
                 track=None, params=None, driver: PursuitConfig | None = None,
                 max_steps_per_lap: int = 3000) -> DemoDataset:
    """Drive ``laps`` complete laps alone on the track and record every decision.

    The first lap starts from start pose ``start_slot``; each completed lap is
    one episode.  Raises DemoFailure on a collision or if a lap takes more than
    ``max_steps_per_lap`` decisions.
    """
    if laps < 0:
        raise ValueError("laps must be >= 0")
    base = env_config or RaceEnvConfig()
    cfg = replace(base, n_agents=1, start_slots=(start_slot,), max_episode_steps=max(1, laps) * max_steps_per_lap + 1)
    env = RaceEnv(cfg, track=track, params=params, seed=seed)
    driver = driver if driver is not None else driver_config_for(seed)
    line = Centerline(env.track.centerline)
    meta = {"scenario": "race", "laps": laps, "seed": seed, "start_slot": start_slot,
            "obs_dim": env.obs_dim, "heads": list(env.action_heads), "lap_times": [], "episodes": laps}
    obs_list, act_list, ep_list = [], [], []
    obs = env.reset(seed)
    done_laps = 0
    steps_this_lap = 0
    total = 0
    while done_laps < laps:
        # the driver sees the world at the scanner's rate, like the policy:
        # pose from the latest scan, speed from the current observation
        cont = pure_pursuit(tuple(env.scan_poses[0]), env.states[0, S_VX], line, env.params, driver)
        a = discretize_race_action(*cont, env.params)
        obs_list.append(obs[0].copy())
        act_list.append(a)
        ep_list.append(done_laps)
        res = env.step(env.actions_from_indices(a[None, :]))
        total += 1
        steps_this_lap += 1
        for _, kind, detail in res.events:
            if kind == "collision":
                raise DemoFailure(f"scripted driver collided at step {total} (lap {done_laps + 1})")
            if kind in ("lap", "best_lap"):
                meta["lap_times"].append(float(detail))
                done_laps += 1
                steps_this_lap = 0
        if steps_this_lap > max_steps_per_lap:
            raise DemoFailure(f"no lap completed within {max_steps_per_lap} steps (step {total})")
        obs = res.obs
    obs_dim = env.obs_dim
    heads = len(env.action_heads)
    return DemoDataset(np.array(obs_list, dtype=float).reshape(-1, obs_dim),
                       np.array(act_list, dtype=np.int64).reshape(-1, heads),
                       np.array(ep_list, dtype=np.int64), meta)
