"""Cooperative traversal of a four-way intersection.

Every agent drives at a fixed throttle and chooses only its steering from
{-1, 0, +1} (full left, straight, full right).  Agents observe their goal
relative to themselves and the pose and speed of every peer (perfect,
zero-latency state sharing).

Single-agent mode: agent 0 learns; the other vehicles follow their lane with
a proportional controller at fixed throttles, and all vehicles reset together
when agent 0's episode ends.  Multi-agent mode: every vehicle learns and
respawns on its own arm as soon as its episode ends.
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
    nigel_params,
    step_vehicles,
    wrap_angle,
)
from ..world import (
    ROUTES,
    ConfigError,
    IntersectionConfig,
    build_intersection,
    lane_violation,
    route_goal_arm,
)
from ..world.geometry import Footprint, rect_corners, rects_overlap
from .common import EpisodeFinished, InvalidAction, StepResult

STEER_ACTIONS = (-1, 0, 1)
PEER_THROTTLES = (0.4, 0.6, 0.8)
MAX_AGENTS = 8  # two inbound lanes on each of four arms


@dataclass(frozen=True)
class IntersectionEnvConfig:
    n_agents: int = 4
    mode: str = "single"              # "single" | "multi"
    k_p: float = 0.425
    fixed_throttle: float = 0.8
    max_episode_steps: int = 2000     # decision steps per agent episode
    goal_radius: float = 0.15
    dt: float = 0.01
    decision_interval: int = 10       # physics steps per decision
    routes: tuple = ("straight",)     # per agent (cycled); "random" draws at every spawn
    peer_gain_lateral: float = 4.0    # rad of steering per metre of lane offset
    peer_gain_heading: float = 1.5    # rad of steering per rad of heading error
    map: IntersectionConfig = field(default_factory=IntersectionConfig)

    def validate(self, params: VehicleParams | None = None) -> None:
        if not (2 <= self.n_agents <= MAX_AGENTS):
            raise ConfigError(f"n_agents must lie in [2, {MAX_AGENTS}]")
        if self.mode not in ("single", "multi"):
            raise ConfigError("mode must be 'single' or 'multi'")
        if not self.k_p > 0:
            raise ConfigError("k_p must be > 0")
        if not (0 < self.fixed_throttle <= 1):
            raise ConfigError("fixed_throttle must lie in (0, 1]")
        if self.max_episode_steps < 1 or self.decision_interval < 1:
            raise ConfigError("max_episode_steps and decision_interval must be >= 1")
        if not self.goal_radius > 0:
            raise ConfigError("goal_radius must be > 0")
        if not self.routes:
            raise ConfigError("routes must name at least one route")
        for r in self.routes:
            if r not in ROUTES + ("random",):
                raise ConfigError(f"unknown route {r!r}; choose from {ROUTES + ('random',)}")
        self.map.validate(None if params is None else params.footprint_size[1])


def obs_dim(n_agents: int) -> int:
    return 2 + 4 * (n_agents - 1)


def intersection_obs(i: int, poses: np.ndarray, goal) -> np.ndarray:
    """Observation of agent ``i``.

    ``poses`` is (N, 4): x, y, yaw, forward speed.  Layout: goal minus own
    position (2), then for each peer in ascending index: position difference
    (2), yaw difference wrapped to (-pi, pi] (1), peer speed (1).
    """
    poses = np.asarray(poses, dtype=float)
    n = poses.shape[0]
    out = np.empty(obs_dim(n))
    out[0] = goal[0] - poses[i, 0]
    out[1] = goal[1] - poses[i, 1]
    k = 2
    for j in range(n):
        if j == i:
            continue
        out[k] = poses[j, 0] - poses[i, 0]
        out[k + 1] = poses[j, 1] - poses[i, 1]
        out[k + 2] = wrap_angle(poses[j, 2] - poses[i, 2])
        out[k + 3] = poses[j, 3]
        k += 4
    return out


def intersection_reward(outcome: str, goal_distance: float, k_p: float = 0.425) -> float:
    """+1 for a safe traversal, -k_p * distance (at most 1) for a failure, else 0."""
    if outcome == "traversed":
        return 1.0
    if outcome == "failed":
        return -min(k_p * goal_distance, 1.0)
    if outcome == "in_progress":
        return 0.0
    raise ValueError(f"unknown outcome {outcome!r}")


def decode_action_intersection(a, params: VehicleParams, fixed_throttle: float = 0.8) -> ActuatorCommand:
    """Steering action in {-1, 0, 1} -> command; -1 is full left lock."""
    if isinstance(a, (bool, np.bool_)) or a not in STEER_ACTIONS:
        raise InvalidAction(f"steering action must be one of {STEER_ACTIONS}, got {a!r}")
    return ActuatorCommand(fixed_throttle, float(a) * params.steer_limit)


def peer_throttle(peer_index: int) -> float:
    """Constant throttle of heuristic peer ``peer_index`` (1, 2, 3, ...)."""
    return PEER_THROTTLES[(peer_index - 1) % len(PEER_THROTTLES)]


def heuristic_peer(state: VehicleState, lane, throttle: float, params: VehicleParams,
                   k_lat: float = 4.0, k_head: float = 1.5) -> ActuatorCommand:
    """Proportional lane keeping.  ``lane`` is (point on centre line, unit direction).

    Positive steering turns right, so an offset to the left of the lane or a
    heading rotated to the left both produce positive steering.
    """
    point, direction = lane
    dx, dy = state.x - point[0], state.y - point[1]
    left_offset = direction[0] * dy - direction[1] * dx
    heading_err = wrap_angle(state.yaw - math.atan2(direction[1], direction[0]))
    steer = k_lat * left_offset + k_head * heading_err
    lim = params.steer_limit
    return ActuatorCommand(throttle, min(max(steer, -lim), lim))


class IntersectionEnv:
    """Intersection traversal POMDP (see module docstring)."""

    n_actions = 3
    action_heads = (3,)

    def __init__(self, config: IntersectionEnvConfig | None = None, params: VehicleParams | None = None,
                 seed: int = 0):
        self.config = config or IntersectionEnvConfig()
        self.params = params or nigel_params()
        self.config.validate(self.params)
        self.map = build_intersection(self.config.map)
        self.n_agents = self.config.n_agents
        self.learners = [0] if self.config.mode == "single" else list(range(self.n_agents))
        self.obs_dim = obs_dim(self.n_agents)
        self._length, self._width = self.params.footprint_size
        self._seed = seed
        self._rng = np.random.default_rng(seed)
        self.states = np.zeros((self.n_agents, STATE_SIZE))
        self.spawn_arm = np.array([k % 4 for k in range(self.n_agents)])
        self.spawn_lane = np.array([k // 4 for k in range(self.n_agents)])
        self.goal_arm = np.zeros(self.n_agents, dtype=int)
        self.goals = np.zeros((self.n_agents, 2))
        self.active = np.ones(self.n_agents, dtype=bool)
        self.agent_steps = np.zeros(self.n_agents, dtype=int)
        self.episode_steps = 0
        self._finished = True
        self.physics_steps = 0

    # ------------------------------------------------------------------
    @property
    def n_learners(self) -> int:
        return len(self.learners)

    @property
    def time(self) -> float:
        return self.physics_steps * self.config.dt

    @staticmethod
    def actions_from_indices(idx) -> list:
        """Policy head indices {0, 1, 2} -> steering directions {-1, 0, +1}."""
        return [STEER_ACTIONS[int(i)] for i in np.asarray(idx).reshape(-1)]

    def _route_for(self, k: int) -> str:
        if self.config.mode == "single" and k != 0:
            return "straight"  # heuristic peers drive straight through
        route = self.config.routes[k % len(self.config.routes)]
        if route == "random":
            route = ROUTES[int(self._rng.integers(len(ROUTES)))]
        return route

    def _spawn(self, k: int) -> None:
        arm, lane = int(self.spawn_arm[k]), int(self.spawn_lane[k])
        point, direction = self.map.lane_center(arm, inbound=True, lane=lane)
        x0, y0, yaw = self.map.spawn_poses[arm]
        # same distance from the centre as the inner-lane spawn, shifted sideways
        along = -(x0 * direction[0] + y0 * direction[1])
        pos = point - along * direction
        self.states[k] = VehicleState.at_pose(pos[0], pos[1], yaw).vec
        self.goal_arm[k] = route_goal_arm(arm, self._route_for(k))
        self.goals[k] = self.map.goal_points[self.goal_arm[k]]
        self.active[k] = True
        self.agent_steps[k] = 0

    def reset(self, seed: int | None = None) -> np.ndarray:
        if seed is not None:
            self._seed = seed
            self._rng = np.random.default_rng(seed)
        for k in range(self.n_agents):
            self._spawn(k)
        self.episode_steps = 0
        self.physics_steps = 0
        self._finished = False
        return self.observations()

    # ------------------------------------------------------------------
    def poses(self) -> np.ndarray:
        return self.states[:, [S_X, S_Y, S_YAW, S_VX]].copy()

    def observation(self, k: int) -> np.ndarray:
        return intersection_obs(k, self.poses(), self.goals[k])

    def observations(self) -> np.ndarray:
        poses = self.poses()
        return np.array([intersection_obs(k, poses, self.goals[k]) for k in self.learners])

    def footprint(self, k: int) -> Footprint:
        s = self.states[k]
        return Footprint(s[S_X], s[S_Y], s[S_YAW], self._length, self._width)

    def goal_distance(self, k: int) -> float:
        return float(math.hypot(self.goals[k, 0] - self.states[k, S_X], self.goals[k, 1] - self.states[k, S_Y]))

    # ------------------------------------------------------------------
    def _commands(self, actions) -> tuple[np.ndarray, np.ndarray]:
        actions = list(np.asarray(actions).reshape(-1))
        if len(actions) != self.n_learners:
            raise InvalidAction(f"expected {self.n_learners} actions, got {len(actions)}")
        throttles = np.zeros(self.n_agents)
        steerings = np.zeros(self.n_agents)
        for k, a in zip(self.learners, actions):
            a = a.item() if isinstance(a, np.generic) else a
            cmd = decode_action_intersection(a, self.params, self.config.fixed_throttle)
            throttles[k], steerings[k] = cmd.throttle, cmd.steering
        if self.config.mode == "single":
            for k in range(1, self.n_agents):
                lane = self.map.lane_center(int(self.spawn_arm[k]), True, int(self.spawn_lane[k]))
                cmd = heuristic_peer(VehicleState.from_vector(self.states[k]), lane, peer_throttle(k), self.params,
                                     self.config.peer_gain_lateral, self.config.peer_gain_heading)
                throttles[k], steerings[k] = cmd.throttle, cmd.steering
        return throttles, steerings

    def _peer_exited(self, k: int) -> bool:
        out = _out_dir(int(self.goal_arm[k]))
        depth = self.map.half_box + self.config.map.goal_depth * self.map.arm_length
        return float(self.states[k, S_X] * out[0] + self.states[k, S_Y] * out[1]) >= depth

    def step(self, actions) -> StepResult:
        if self._finished:
            raise EpisodeFinished("episode has ended; call reset() before stepping again")
        cfg = self.config
        throttles, steerings = self._commands(actions)
        idx = np.nonzero(self.active)[0]
        self.states[idx] = step_vehicles(self.states[idx], throttles[idx], steerings[idx], self.params,
                                         cfg.dt, cfg.decision_interval)
        self.physics_steps += cfg.decision_interval
        self.episode_steps += 1
        self.agent_steps[self.learners] += 1

        corners = {k: rect_corners(self.states[k, S_X], self.states[k, S_Y], self.states[k, S_YAW],
                                   self._length, self._width) for k in idx}
        events = []
        collided = set()
        learner_set = set(self.learners)
        for a_pos, a in enumerate(idx):
            for b in idx[a_pos + 1:]:
                if a not in learner_set and b not in learner_set:
                    continue  # heuristic peers do not interact with each other
                if rects_overlap(corners[a], corners[b]):
                    collided.update((int(a), int(b)))
                    events.append((int(a), "collision", int(b)))
                    events.append((int(b), "collision", int(a)))

        for k in self.learners:
            if k not in collided and self.map.walls.collides(corners[k]):
                collided.add(k)
                events.append((k, "collision", "wall"))

        n = self.n_learners
        rewards = np.zeros(n)
        dones = np.zeros(n, dtype=bool)
        truncated = np.zeros(n, dtype=bool)
        reasons = [None] * n
        for pos, k in enumerate(self.learners):
            dist = self.goal_distance(k)
            if k in collided:
                reasons[pos] = "collision"
            elif lane_violation(self.footprint(k), self.map, int(self.spawn_arm[k]), int(self.goal_arm[k])):
                reasons[pos] = "lane"
                events.append((k, "lane", None))
            elif dist <= cfg.goal_radius:
                reasons[pos] = "goal"
                events.append((k, "goal", None))
            elif self.agent_steps[k] >= cfg.max_episode_steps:
                reasons[pos] = "timeout"
                truncated[pos] = True
                events.append((k, "timeout", None))
            if reasons[pos] in ("collision", "lane"):
                rewards[pos] = intersection_reward("failed", dist, cfg.k_p)
            elif reasons[pos] == "goal":
                rewards[pos] = intersection_reward("traversed", dist, cfg.k_p)
            dones[pos] = reasons[pos] is not None

        if cfg.mode == "single":
            for k in range(1, self.n_agents):
                if self.active[k] and self._peer_exited(k):
                    self.active[k] = False
                    self.states[k, S_VX:S_VX + 3] = 0.0
                    events.append((k, "exit", None))

        final_obs = {}
        if dones.any():
            poses = self.poses()
            for pos, k in enumerate(self.learners):
                if dones[pos]:
                    final_obs[pos] = intersection_obs(k, poses, self.goals[k])
        episode_over = False
        if cfg.mode == "single":
            episode_over = bool(dones[0])
            self._finished = episode_over
        else:
            for pos, k in enumerate(self.learners):
                if dones[pos]:
                    self._spawn(k)
                    events.append((k, "respawn", None))
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


def _out_dir(arm: int) -> tuple[float, float]:
    return ((0.0, -1.0), (1.0, 0.0), (0.0, 1.0), (-1.0, 0.0))[arm]
