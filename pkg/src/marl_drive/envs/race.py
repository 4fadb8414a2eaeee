"""Competitive head-to-head racing on a closed track.

Each agent observes its forward speed and 27 LIDAR ranges (the opponent's
body is visible to the scanner; no state is shared).  Actions pick a throttle
duty cycle from {0.1, 0.5, 1.0} and a steering direction from {-1, 0, +1}.
A colliding agent is penalised and put back on its start pose while the
opponent races on.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..dynamics import (
    S_VX,
    S_X,
    S_Y,
    S_YAW,
    STATE_SIZE,
    ActuatorCommand,
    VehicleParams,
    VehicleState,
    f1tenth_params,
    step_vehicles,
)
from ..sensors import LidarScan, LidarSpec, beam_downsample, lidar_scan
from ..world import ConfigError, LapProgress, RaceTrack, bundled_track, checkpoint_crossing
from ..world.geometry import rect_corners, rects_overlap
from .common import EpisodeFinished, InvalidAction, StepResult

THROTTLE_LEVELS = (0.1, 0.5, 1.0)
STEER_LEVELS = (-1, 0, 1)
OBS_DIM = 28
# per-element input scaling used by the learners: speed / 5 m/s, ranges / 10 m
OBS_SCALE = (0.2,) + (0.1,) * 27


@dataclass(frozen=True)
class RaceEnvConfig:
    n_agents: int = 2
    r_collision: float = -1.0
    r_checkpoint: float = 0.01
    r_lap: float = 0.1
    r_best_lap: float = 0.7
    velocity_coef: float = 0.01
    max_episode_steps: int = 3000   # decision steps
    dt: float = 0.01
    decision_interval: int = 5      # physics steps per decision
    lidar: LidarSpec = field(default_factory=LidarSpec)
    start_slots: tuple | None = None  # start pose index per agent; default 0, 1, ...

    def slots(self) -> tuple:
        return tuple(self.start_slots) if self.start_slots is not None else tuple(range(self.n_agents))

    def validate(self) -> None:
        # one agent is accepted for demonstration recording
        if self.n_agents not in (1, 2):
            raise ConfigError("n_agents must be 2 (or 1 for demonstration recording)")
        if self.max_episode_steps < 1 or self.decision_interval < 1:
            raise ConfigError("max_episode_steps and decision_interval must be >= 1")
        if self.velocity_coef < 0:
            raise ConfigError("velocity_coef must be >= 0")
        slots = self.slots()
        if len(slots) != self.n_agents or len(set(slots)) != len(slots) or min(slots) < 0:
            raise ConfigError("start_slots must name one distinct start pose per agent")


def decode_action_race(throttle, steer, params: VehicleParams) -> ActuatorCommand:
    """(duty cycle, steering direction) -> command; 9 joint actions in total."""
    if isinstance(throttle, (bool, np.bool_)) or throttle not in THROTTLE_LEVELS:
        raise InvalidAction(f"throttle must be one of {THROTTLE_LEVELS}, got {throttle!r}")
    if isinstance(steer, (bool, np.bool_)) or steer not in STEER_LEVELS:
        raise InvalidAction(f"steering must be one of {STEER_LEVELS}, got {steer!r}")
    return ActuatorCommand(float(throttle), float(steer) * params.steer_limit)


def race_obs(speed: float, scan: LidarScan) -> np.ndarray:
    """[forward speed, 27 downsampled ranges]."""
    out = np.empty(OBS_DIM)
    out[0] = speed
    out[1:] = beam_downsample(scan)
    return out


def race_reward(collision: bool, event, speed: float, config: RaceEnvConfig | None = None) -> float:
    """Exactly one case applies, in priority order: collision, checkpoint, lap,
    best lap, otherwise a speed bonus.  ``event`` comes from checkpoint_crossing."""
    cfg = config or RaceEnvConfig()
    if collision:
        return cfg.r_collision
    kind = event[0] if event else None
    if kind == "checkpoint":
        return cfg.r_checkpoint
    if kind == "lap":
        return cfg.r_lap
    if kind == "best_lap":
        return cfg.r_best_lap
    return cfg.velocity_coef * speed


class RaceEnv:
    """Two-car race (see module docstring)."""

    action_heads = (len(THROTTLE_LEVELS), len(STEER_LEVELS))
    obs_dim = OBS_DIM

    def __init__(self, config: RaceEnvConfig | None = None, track: RaceTrack | None = None,
                 params: VehicleParams | None = None, seed: int = 0):
        self.config = config or RaceEnvConfig()
        self.config.validate()
        self.track = track if track is not None else bundled_track()
        if self.track.start_poses.shape[0] <= max(self.config.slots()):
            raise ConfigError("track has fewer start poses than agents")
        self.params = params or f1tenth_params()
        self.n_agents = self.config.n_agents
        self.learners = list(range(self.n_agents))
        self._length, self._width = self.params.footprint_size
        self._lidar_period = self.config.lidar.period_steps(self.config.dt)
        self._seed = seed
        self.states = np.zeros((self.n_agents, STATE_SIZE))
        self.progress = [LapProgress() for _ in range(self.n_agents)]
        self.ghost = np.zeros(self.n_agents, dtype=bool)
        self.scans = [None] * self.n_agents
        self.scan_poses = np.zeros((self.n_agents, 3))  # vehicle pose at each agent's latest scan
        self.physics_steps = 0
        self.episode_steps = 0
        self._finished = True

    @property
    def n_learners(self) -> int:
        return self.n_agents

    @property
    def time(self) -> float:
        return self.physics_steps * self.config.dt

    @staticmethod
    def actions_from_indices(idx) -> list:
        idx = np.asarray(idx).reshape(-1, 2)
        return [(THROTTLE_LEVELS[int(i)], STEER_LEVELS[int(j)]) for i, j in idx]

    # ------------------------------------------------------------------
    def _corners(self, k: int) -> np.ndarray:
        s = self.states[k]
        return rect_corners(s[S_X], s[S_Y], s[S_YAW], self._length, self._width)

    def _outline(self, k: int) -> np.ndarray:
        c = self._corners(k)
        return np.hstack([c, np.roll(c, -1, axis=0)])

    def _scan(self, k: int) -> None:
        others = [self._outline(j) for j in range(self.n_agents) if j != k]
        extra = np.vstack(others) if others else None
        s = self.states[k]
        self.scan_poses[k] = (s[S_X], s[S_Y], s[S_YAW])
        self.scans[k] = lidar_scan((s[S_X], s[S_Y], s[S_YAW]), self.config.lidar, self.track.walls, extra)

    def _place(self, k: int) -> None:
        x, y, yaw = self.track.start_poses[self.config.slots()[k]]
        self.states[k] = VehicleState.at_pose(x, y, yaw).vec
        self.progress[k].reset(self.time, next_gate=self.track.first_gate_ahead(x, y))

    def _overlaps_other(self, k: int) -> bool:
        ck = self._corners(k)
        return any(rects_overlap(ck, self._corners(j)) for j in range(self.n_agents) if j != k)

    def reset(self, seed: int | None = None) -> np.ndarray:
        if seed is not None:
            self._seed = seed
        self.physics_steps = 0
        self.episode_steps = 0
        for k in range(self.n_agents):
            self._place(k)
        self.ghost[:] = False
        for k in range(self.n_agents):
            self._scan(k)
        self._finished = False
        return self.observations()

    def observation(self, k: int) -> np.ndarray:
        return race_obs(self.states[k, S_VX], self.scans[k])

    def observations(self) -> np.ndarray:
        return np.array([self.observation(k) for k in range(self.n_agents)])

    # ------------------------------------------------------------------
    def _commands(self, actions):
        actions = list(actions)
        if len(actions) != self.n_agents:
            raise InvalidAction(f"expected {self.n_agents} actions, got {len(actions)}")
        throttles = np.empty(self.n_agents)
        steerings = np.empty(self.n_agents)
        for k, a in enumerate(actions):
            if len(a) != 2:
                raise InvalidAction("each race action is a (throttle, steering) pair")
            t, d = (v.item() if isinstance(v, np.generic) else v for v in a)
            cmd = decode_action_race(t, d, self.params)
            throttles[k], steerings[k] = cmd.throttle, cmd.steering
        return throttles, steerings

    def _advance(self, throttles, steerings) -> None:
        """Physics for one decision, scanning whenever the LIDAR period elapses."""
        remaining = self.config.decision_interval
        while remaining > 0:
            n = min(remaining, self._lidar_period - self.physics_steps % self._lidar_period)
            self.states = step_vehicles(self.states, throttles, steerings, self.params, self.config.dt, n)
            self.physics_steps += n
            remaining -= n
            if self.physics_steps % self._lidar_period == 0:
                for k in range(self.n_agents):
                    self._scan(k)

    def _hits_wall(self, k: int, prev_xy) -> bool:
        if self.track.walls.collides(self._corners(k)):
            return True
        # a swept check of the centre catches tunnelling through thin walls
        dx = self.states[k, S_X] - prev_xy[0]
        dy = self.states[k, S_Y] - prev_xy[1]
        dist = math.hypot(dx, dy)
        if dist <= 0.0:
            return False
        hit = self.track.walls.cast(prev_xy[0], prev_xy[1], [math.atan2(dy, dx)], dist)[0]
        return bool(np.isfinite(hit))

    def step(self, actions) -> StepResult:
        if self._finished:
            raise EpisodeFinished("episode has ended; call reset() before stepping again")
        cfg = self.config
        throttles, steerings = self._commands(actions)
        prev = self.states[:, [S_X, S_Y]].copy()
        self._advance(throttles, steerings)
        self.episode_steps += 1
        n = self.n_agents
        events = []
        collision = np.zeros(n, dtype=bool)
        for k in range(n):
            if self._hits_wall(k, prev[k]):
                collision[k] = True
                events.append((k, "collision", "wall"))
        for a in range(n):
            for b in range(a + 1, n):
                if self.ghost[a] or self.ghost[b]:
                    continue
                if rects_overlap(self._corners(a), self._corners(b)):
                    collision[a] = collision[b] = True
                    events.append((a, "collision", b))
                    events.append((b, "collision", a))
        rewards = np.zeros(n)
        reasons = [None] * n
        for k in range(n):
            event = None
            if not collision[k]:
                event = checkpoint_crossing(prev[k], self.states[k, [S_X, S_Y]], self.track, self.progress[k], self.time)
                if event is not None:
                    events.append((k, event[0], event[1]))
            rewards[k] = race_reward(bool(collision[k]), event, float(self.states[k, S_VX]), cfg)
            if collision[k]:
                reasons[k] = "collision"
        dones = collision.copy()
        truncated = np.zeros(n, dtype=bool)
        final_obs = {k: self.observation(k) for k in range(n) if dones[k]}
        episode_over = self.episode_steps >= cfg.max_episode_steps
        if episode_over:
            for k in range(n):
                if not dones[k]:
                    dones[k] = truncated[k] = True
                    reasons[k] = "timeout"
                    final_obs[k] = self.observation(k)
                    events.append((k, "timeout", None))
            self._finished = True
        for k in range(n):
            if collision[k]:
                self._place(k)
                self.ghost[k] = True
                self._scan(k)
                events.append((k, "respawn", None))
        for k in range(n):
            if self.ghost[k] and not self._overlaps_other(k):
                self.ghost[k] = False
        return StepResult(
            obs=self.observations(),
            rewards={"extrinsic": rewards},
            dones=dones,
            reasons=reasons,
            truncated=truncated,
            final_obs=final_obs,
            events=events,
            episode_over=episode_over,
            step=self.episode_steps,
        )
