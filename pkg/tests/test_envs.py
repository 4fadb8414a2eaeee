import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from marl_drive.dynamics import S_VX, S_X, S_Y, S_YAW, VehicleState, f1tenth_params, nigel_params
from marl_drive.envs import (
    PEER_THROTTLES,
    RACE_OBS_DIM,
    EpisodeFinished,
    IntersectionEnv,
    IntersectionEnvConfig,
    InvalidAction,
    RaceEnv,
    RaceEnvConfig,
    decode_action_intersection,
    decode_action_race,
    heuristic_peer,
    intersection_obs,
    intersection_reward,
    obs_dim,
    peer_throttle,
    race_obs,
    race_reward,
)
from marl_drive.sensors import LidarScan, LidarSpec, lidar_scan
from marl_drive.world import ConfigError, SegmentMap, bundled_track

# --------------------------------------------------------------------------
# Intersection: observations, rewards, actions
# --------------------------------------------------------------------------


@pytest.mark.parametrize("n", [2, 3, 4, 5, 6])
def test_intersection_obs_dimension(n):
    assert obs_dim(n) == 2 + 4 * (n - 1)
    env = IntersectionEnv(IntersectionEnvConfig(n_agents=n, mode="multi"))
    assert env.reset(0).shape == (n, 2 + 4 * (n - 1))


def test_four_agents_give_fourteen_inputs():
    assert obs_dim(4) == 14
    assert IntersectionEnv().reset(0).shape == (1, 14)


def test_obs_all_differences_vanish():
    poses = np.array([[1.0, -2.0, 0.3, 0.0], [1.0, -2.0, 0.3, 0.0]])
    assert intersection_obs(0, poses, (1.0, -2.0)).tolist() == [0, 0, 0, 0, 0, 0]


def test_obs_worked_example():
    poses = np.array([[0.0, 0.0, 0.0, 0.0], [3.0, 4.0, math.pi / 2, 0.5]])
    np.testing.assert_array_equal(intersection_obs(0, poses, (1.0, 2.0)), [1, 2, 3, 4, math.pi / 2, 0.5])


def test_obs_peer_order_skips_self():
    poses = np.array([[0, 0, 0, 0.1], [1, 0, 0, 0.2], [2, 0, 0, 0.3]], dtype=float)
    o = intersection_obs(1, poses, (0.0, 0.0))
    assert o[5] == 0.1 and o[9] == 0.3
    assert o[2] == -1.0 and o[6] == 1.0


def test_obs_relative_yaw_is_wrapped():
    poses = np.array([[0, 0, 3.0, 0], [0, 0, -3.0, 0]], dtype=float)
    o = intersection_obs(0, poses, (0.0, 0.0))
    assert o[4] == pytest.approx(2 * math.pi - 6.0, abs=1e-12)


def test_intersection_reward_constants():
    assert intersection_reward("traversed", 5.0) == 1.0
    assert intersection_reward("failed", 2.0) == -0.85
    assert intersection_reward("failed", 2.353) == -1.0
    assert intersection_reward("in_progress", 2.0) == 0.0
    with pytest.raises(ValueError):
        intersection_reward("crashed", 1.0)


@given(st.floats(0.0, 100.0, allow_nan=False))
def test_failure_penalty_bounds(d):
    r = intersection_reward("failed", d)
    assert -1.0 <= r <= 0.0
    assert r == -min(0.425 * d, 1.0)


def test_decode_intersection_action():
    p = nigel_params()
    assert decode_action_intersection(-1, p).steering == -p.steer_limit
    assert decode_action_intersection(0, p).steering == 0.0
    cmd = decode_action_intersection(1, p)
    assert cmd.steering == p.steer_limit and cmd.throttle == 0.8
    for bad in (2, 0.5, True, "1"):
        with pytest.raises(InvalidAction):
            decode_action_intersection(bad, p)


def test_peer_throttles_by_index():
    assert tuple(peer_throttle(k) for k in (1, 2, 3)) == (0.4, 0.6, 0.8) == PEER_THROTTLES


def test_heuristic_peer_steering_signs():
    p = nigel_params()
    lane = (np.array([0.0, 0.0]), np.array([1.0, 0.0]))
    centred = heuristic_peer(VehicleState.at_pose(0.0, 0.0, 0.0), lane, 0.4, p)
    assert centred.steering == 0.0 and centred.throttle == 0.4
    left = heuristic_peer(VehicleState.at_pose(0.0, 0.05, 0.0), lane, 0.4, p)
    assert left.steering > 0  # positive steering turns right, back to the lane


def test_config_validation():
    with pytest.raises(ConfigError):
        IntersectionEnv(IntersectionEnvConfig(n_agents=1))
    with pytest.raises(ConfigError):
        IntersectionEnv(IntersectionEnvConfig(k_p=0.0))
    with pytest.raises(ConfigError):
        IntersectionEnv(IntersectionEnvConfig(fixed_throttle=1.5))


# --------------------------------------------------------------------------
# Intersection: stepping
# --------------------------------------------------------------------------


def test_first_step_has_no_events():
    env = IntersectionEnv()
    env.reset(0)
    res = env.step([0])
    assert res.rewards["extrinsic"].tolist() == [0.0]
    assert not res.dones.any() and not res.episode_over


def test_goal_arrival():
    env = IntersectionEnv()
    env.reset(0)
    gx, gy = env.goals[0]
    out = math.atan2(gy, gx)
    env.states[0] = VehicleState.at_pose(gx, gy, out).vec
    res = env.step([0])
    assert res.reasons == ["goal"] and res.dones[0] and res.episode_over
    assert res.rewards["extrinsic"][0] == 1.0
    with pytest.raises(EpisodeFinished):
        env.step([0])


def test_collision_penalises_both_by_own_goal_distance():
    env = IntersectionEnv(IntersectionEnvConfig(n_agents=2, mode="multi"))
    env.reset(0)
    env.states[1] = env.states[0].copy()
    res = env.step([0, 0])
    assert res.reasons == ["collision", "collision"]
    for k in range(2):
        dist = float(np.hypot(*res.final_obs[k][:2]))
        assert res.rewards["extrinsic"][k] == -min(0.425 * dist, 1.0)
    # each agent respawns at its own arm and the episode goes on
    assert not res.episode_over
    assert [e[1] for e in res.events].count("respawn") == 2


def test_single_mode_resets_jointly():
    env = IntersectionEnv()
    env.reset(0)
    env.states[1] = env.states[0].copy()
    res = env.step([0])
    assert res.reasons == ["collision"] and res.episode_over
    obs = env.reset(1)
    assert obs.shape == (1, 14) and env.active.all()


def test_wall_contact_is_a_collision():
    env = IntersectionEnv()
    env.reset(0)
    env.states[0] = VehicleState.at_pose(1.5, 0.6, 0.0).vec   # straddling an arm wall
    res = env.step([0])
    assert res.reasons == ["collision"]
    assert (0, "collision", "wall") in res.events


def test_timeout_truncates():
    env = IntersectionEnv(IntersectionEnvConfig(max_episode_steps=3))
    env.reset(0)
    reasons = [env.step([0]).reasons[0] for _ in range(3)]
    assert reasons[-1] == "timeout"


def test_intersection_determinism():
    def run(seed):
        env = IntersectionEnv(IntersectionEnvConfig(n_agents=3, mode="multi", routes=("random",)))
        env.reset(seed)
        rng = np.random.default_rng(5)
        traj = []
        for _ in range(40):
            env.step(env.actions_from_indices(rng.integers(0, 3, size=3)))
            traj.append(env.states.copy())
        return np.array(traj)

    assert np.array_equal(run(7), run(7))


# --------------------------------------------------------------------------
# Race: observations, rewards, actions
# --------------------------------------------------------------------------


def test_race_obs_open_space():
    spec = LidarSpec()
    o = race_obs(0.0, LidarScan(np.full(spec.n_beams, np.inf), spec))
    assert o.shape == (RACE_OBS_DIM,) == (28,)
    assert o.tolist() == [0.0] + [10.0] * 27


def test_race_obs_wall_ahead():
    scan = lidar_scan((0.0, 0.0, 0.0), LidarSpec(), SegmentMap([[3.0, -20.0, 3.0, 20.0]]))
    o = race_obs(1.2, scan)
    assert o[0] == 1.2 and o[14] == 3.0


def test_race_reward_priority():
    cfg = RaceEnvConfig()
    assert race_reward(True, ("checkpoint", "C"), 3.0, cfg) == -1.0
    assert race_reward(True, ("best_lap", 9.0), 3.0, cfg) == -1.0
    assert race_reward(False, ("checkpoint", "C"), 3.0, cfg) == 0.01
    assert race_reward(False, ("lap", 11.0), 3.0, cfg) == 0.1
    assert race_reward(False, ("best_lap", 9.0), 3.0, cfg) == 0.7
    assert race_reward(False, None, 1.5, cfg) == 0.01 * 1.5


def test_decode_race_action():
    p = f1tenth_params()
    cmd = decode_action_race(0.5, -1, p)
    assert cmd.throttle == 0.5 and cmd.steering == -p.steer_limit
    for t, d in ((0.2, 0), (1.0, 2), (True, 0)):
        with pytest.raises(InvalidAction):
            decode_action_race(t, d, p)
    assert RaceEnv.actions_from_indices([[0, 0], [2, 2]]) == [(0.1, -1), (1.0, 1)]


def test_race_config_validation():
    with pytest.raises(ConfigError):
        RaceEnv(RaceEnvConfig(n_agents=3))
    with pytest.raises(ConfigError):
        RaceEnv(RaceEnvConfig(start_slots=(0, 0)))


# --------------------------------------------------------------------------
# Race: stepping
# --------------------------------------------------------------------------


def test_race_reset_observations():
    env = RaceEnv()
    obs = env.reset(0)
    assert obs.shape == (2, 28)
    assert np.all(obs[:, 0] == 0.0)
    assert np.all((obs[:, 1:] > 0) & (obs[:, 1:] <= 10.0))


def test_race_slow_driving_pays_speed_bonus():
    env = RaceEnv()
    env.reset(0)
    for _ in range(5):
        res = env.step([(0.1, 0), (0.1, 0)])
        assert not res.dones.any()
        speeds = env.states[:, S_VX]
        np.testing.assert_array_equal(res.rewards["extrinsic"], 0.01 * speeds)


def test_start_poses_are_phase_shifted():
    track = bundled_track()
    env = RaceEnv(track=track)
    env.reset(0)
    assert [track.first_gate_ahead(*p[:2]) for p in track.start_poses] == [2, 1]
    lead, follow = env.states[0, [S_X, S_Y]], env.states[1, [S_X, S_Y]]
    assert np.hypot(*(lead - follow)) == pytest.approx(1.5, abs=0.05)


def test_wall_collision_resets_only_that_agent():
    env = RaceEnv()
    env.reset(0)
    # turn agent 0 hard towards the outside wall at full throttle
    for _ in range(400):
        res = env.step([(1.0, 1), (0.1, 0)])
        if res.dones[0]:
            break
    assert res.reasons[0] == "collision"
    assert res.rewards["extrinsic"][0] == -1.0
    assert not res.dones[1] and res.rewards["extrinsic"][1] >= 0
    x, y, yaw = env.track.start_poses[0]
    assert env.states[0, S_X] == x and env.states[0, S_Y] == y and env.states[0, S_YAW] == yaw
    assert (0, "respawn", None) in res.events


def test_car_to_car_collision_penalises_both():
    env = RaceEnv()
    env.reset(0)
    env.states[1] = env.states[0].copy()
    env.states[1, S_X] += 0.1
    res = env.step([(0.1, 0), (0.1, 0)])
    assert res.reasons == ["collision", "collision"]
    assert res.rewards["extrinsic"].tolist() == [-1.0, -1.0]


def test_race_timeout_ends_episode():
    env = RaceEnv(RaceEnvConfig(max_episode_steps=4))
    env.reset(0)
    for _ in range(3):
        assert not env.step([(0.1, 0), (0.1, 0)]).episode_over
    res = env.step([(0.1, 0), (0.1, 0)])
    assert res.episode_over and res.truncated.all() and res.reasons == ["timeout", "timeout"]
    with pytest.raises(EpisodeFinished):
        env.step([(0.1, 0), (0.1, 0)])


def test_race_rejects_bad_actions():
    env = RaceEnv()
    env.reset(0)
    with pytest.raises(InvalidAction):
        env.step([(0.1, 0)])
    with pytest.raises(InvalidAction):
        env.step([(0.3, 0), (0.1, 0)])


def test_lidar_sees_the_other_car():
    env = RaceEnv()
    env.reset(0)
    # follower sits directly behind the leader: its forward beam hits the leader's body
    gap = np.hypot(*(env.states[0, [S_X, S_Y]] - env.states[1, [S_X, S_Y]]))
    length = env.params.footprint_size[0]
    assert env.observation(1)[14] == pytest.approx(gap - length / 2, abs=0.02)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_race_determinism(seed):
    def run():
        env = RaceEnv()
        env.reset(seed)
        rng = np.random.default_rng(seed)
        out = []
        for _ in range(30):
            res = env.step(env.actions_from_indices(rng.integers(0, 3, size=(2, 2))))
            out.append(np.concatenate([env.states.ravel(), res.rewards["extrinsic"]]))
        return np.array(out)

    assert np.array_equal(run(), run())
