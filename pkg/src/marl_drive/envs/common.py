"""Types shared by the two environments."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DONE_REASONS = ("goal", "collision", "lane", "timeout", "respawn")


class InvalidAction(ValueError):
    """An action outside the environment's discrete action set."""


class EpisodeFinished(RuntimeError):
    """``step`` was called on an episode that has ended and was not reset."""


@dataclass
class StepResult:
    """Outcome of one decision step for every learning agent.

    ``obs`` are the observations for the next decision (after any automatic
    respawn); ``final_obs`` holds, for agents that finished this step, the
    observation of the terminal state so a trainer can bootstrap truncated
    episodes.  ``rewards`` maps stream name to per-agent values; environments
    fill ``"extrinsic"`` and trainers add ``"gail"`` / ``"curiosity"``.
    """

    obs: np.ndarray
    rewards: dict
    dones: np.ndarray
    reasons: list
    truncated: np.ndarray
    final_obs: dict = field(default_factory=dict)
    events: list = field(default_factory=list)   # (agent, kind, detail)
    episode_over: bool = False                    # the whole environment needs reset()
    step: int = 0                                 # decision steps since reset()

    @property
    def reward(self) -> np.ndarray:
        return self.rewards["extrinsic"]
