"""A tabular corridor task for sanity-checking the learner against an exact solution."""
from __future__ import annotations

import numpy as np

from ..envs.common import EpisodeFinished, InvalidAction, StepResult

LEFT, RIGHT = 0, 1


class CorridorEnv:
    """States 0..n-1 in a line; actions move one cell left or right (walls at
    both ends).  Entering the last cell pays +1 and ends the episode; all other
    steps pay 0.  Episodes start in a uniformly random non-terminal cell and are
    truncated after ``max_steps``.  Observations are one-hot cell codes."""

    action_heads = (2,)

    def __init__(self, n_states: int = 10, max_steps: int = 50, seed: int = 0):
        if n_states < 2:
            raise ValueError("need at least two states")
        self.n_states = n_states
        self.max_steps = max_steps
        self.obs_dim = n_states
        self.learners = [0]
        self.n_learners = 1
        self._rng = np.random.default_rng(seed)
        self.state = 0
        self.steps = 0
        self._finished = True

    @staticmethod
    def actions_from_indices(idx) -> list:
        return [int(i) for i in np.asarray(idx).reshape(-1)]

    def _obs(self) -> np.ndarray:
        o = np.zeros((1, self.n_states))
        o[0, self.state] = 1.0
        return o

    def reset(self, seed: int | None = None) -> np.ndarray:
        if seed is not None:
            self._rng = np.random.default_rng(seed)
        self.state = int(self._rng.integers(0, self.n_states - 1))
        self.steps = 0
        self._finished = False
        return self._obs()

    def step(self, actions) -> StepResult:
        if self._finished:
            raise EpisodeFinished("episode has ended; call reset()")
        (a,) = list(actions)
        if a not in (LEFT, RIGHT):
            raise InvalidAction(f"corridor actions are 0 (left) and 1 (right), got {a!r}")
        self.state = int(np.clip(self.state + (1 if a == RIGHT else -1), 0, self.n_states - 1))
        self.steps += 1
        goal = self.state == self.n_states - 1
        timeout = not goal and self.steps >= self.max_steps
        done = goal or timeout
        self._finished = done
        obs = self._obs()
        return StepResult(obs=obs, rewards={"extrinsic": np.array([1.0 if goal else 0.0])},
                          dones=np.array([done]), reasons=["goal" if goal else ("timeout" if timeout else None)],
                          truncated=np.array([timeout]), final_obs={0: obs[0]} if done else {},
                          events=[], episode_over=done, step=self.steps)

    def transition_table(self):
        """(next_state, reward, terminal) arrays indexed [state, action]."""
        n = self.n_states
        nxt = np.zeros((n, 2), dtype=int)
        rew = np.zeros((n, 2))
        for s in range(n):
            for a, d in ((LEFT, -1), (RIGHT, 1)):
                t = min(max(s + d, 0), n - 1)
                nxt[s, a] = t
                rew[s, a] = 1.0 if t == n - 1 else 0.0
        terminal = np.zeros(n, dtype=bool)
        terminal[-1] = True
        return nxt, rew, terminal


def value_iteration(next_state, reward, terminal, gamma: float, tol: float = 1e-12):
    """Optimal state values and the greedy policy of a deterministic MDP."""
    n = len(terminal)
    V = np.zeros(n)
    while True:
        Q = reward + gamma * np.where(terminal[next_state], 0.0, V[next_state])
        V_new = np.where(terminal, 0.0, Q.max(axis=1))
        if np.max(np.abs(V_new - V)) < tol:
            break
        V = V_new
    return V_new, Q.argmax(axis=1), Q
