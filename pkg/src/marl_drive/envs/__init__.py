"""Multi-agent environments: the four-way intersection and the two-car race."""
from .common import DONE_REASONS, EpisodeFinished, InvalidAction, StepResult
from .intersection import (
    PEER_THROTTLES,
    STEER_ACTIONS,
    IntersectionEnv,
    IntersectionEnvConfig,
    decode_action_intersection,
    heuristic_peer,
    intersection_obs,
    intersection_reward,
    obs_dim,
    peer_throttle,
)
from .race import (
    OBS_DIM as RACE_OBS_DIM,
    OBS_SCALE as RACE_OBS_SCALE,
    STEER_LEVELS,
    THROTTLE_LEVELS,
    RaceEnv,
    RaceEnvConfig,
    decode_action_race,
    race_obs,
    race_reward,
)
