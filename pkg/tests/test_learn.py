import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from marl_drive.dynamics import f1tenth_params
from marl_drive.envs import IntersectionEnv, IntersectionEnvConfig
from marl_drive.learn import (
    Adam,
    CheckpointError,
    CorridorEnv,
    DemoDataset,
    DemoFileError,
    Discriminator,
    IcmModule,
    Mlp,
    MlpPolicy,
    PpoConfig,
    RolloutBuffer,
    ShapeError,
    TrainConfig,
    Trainer,
    UpdateAborted,
    action_agreement,
    bc_loss,
    combine_rewards,
    curiosity_step,
    discretize_race_action,
    gae,
    gail_reward_from_logit,
    gail_step,
    load_checkpoint,
    load_demos,
    policy_loss_and_grad,
    ppo_update,
    pure_pursuit,
    record_demos,
    save_checkpoint,
    save_demos,
    value_iteration,
)
from marl_drive.learn.trainer import BASE_COLUMNS
from oracles import (
    brute_force_gae,
    discounted_returns,
    discriminator_gradcheck,
    icm_gradcheck,
    policy_value_gradcheck,
)

# --------------------------------------------------------------------------
# Networks
# --------------------------------------------------------------------------


def test_tiny_network_by_hand():
    net = Mlp((2, 2, 1), params=np.full(Mlp.count((2, 2, 1)), 0.1))
    h = math.tanh(0.1 * 1.0 + 0.1 * -2.0 + 0.1)          # both hidden units are equal
    assert net(np.array([[1.0, -2.0]]))[0, 0] == pytest.approx(0.1 * h + 0.1 * h + 0.1, abs=1e-15)


def test_mlp_rejects_wrong_parameter_count():
    with pytest.raises(ShapeError):
        Mlp((2, 2, 1), params=np.zeros(3))


def test_policy_starts_uniform():
    pol = MlpPolicy(14, (3,), seed=3)
    obs = np.random.default_rng(0).standard_normal((20, 14))
    assert np.all(np.abs(pol.entropy(obs) - math.log(3)) < 1e-6)
    logits, value = pol.forward(obs)
    assert np.all(logits == 0.0) and np.all(value == 0.0)


def test_policy_rejects_bad_observation_width():
    with pytest.raises(ShapeError):
        MlpPolicy(14).forward(np.zeros((2, 13)))


@pytest.mark.parametrize("seed", range(3))
def test_policy_and_value_gradients(seed):
    pol_err, val_err = policy_value_gradcheck(seed)
    assert pol_err < 1e-4 and val_err < 1e-4


@pytest.mark.parametrize("seed", range(3))
def test_discriminator_gradient(seed):
    assert discriminator_gradcheck(seed) < 1e-4


@pytest.mark.parametrize("seed", range(3))
def test_icm_gradients(seed):
    errs = icm_gradcheck(seed)
    assert max(errs.values()) < 1e-4, errs


def test_adam_first_step_moves_by_learning_rate():
    p = np.array([1.0, -1.0])
    Adam(2, lr=0.1).step(p, np.array([3.0, -0.5]))
    np.testing.assert_allclose(p, [0.9, -0.9], atol=1e-7)


# --------------------------------------------------------------------------
# PPO numerics
# --------------------------------------------------------------------------


def test_gae_matches_brute_force_on_random_episodes():
    rng = np.random.default_rng(0)
    for _ in range(100):
        T = int(rng.integers(1, 40))
        r = rng.standard_normal(T)
        v = rng.standard_normal(T + 1)
        d = rng.random(T) < 0.1
        gamma, lam = rng.uniform(0.8, 1.0), rng.uniform(0.0, 1.0)
        adv, ret = gae(r, v, d, gamma, lam)
        np.testing.assert_allclose(adv, brute_force_gae(r, v, d, gamma, lam), atol=1e-10, rtol=0)
        np.testing.assert_allclose(ret, adv + v[:-1], atol=1e-12, rtol=0)


def test_gae_lambda_zero_is_td_error():
    r, v, d = np.array([1.0, 2.0, 3.0]), np.array([0.5, 0.25, -1.0, 4.0]), np.array([False, True, False])
    adv, _ = gae(r, v, d, 0.9, 0.0)
    np.testing.assert_allclose(adv, [1 + 0.9 * 0.25 - 0.5, 2 - 0.25, 3 + 0.9 * 4 - (-1)], atol=1e-15)


def test_gae_lambda_one_gives_monte_carlo_returns():
    rng = np.random.default_rng(1)
    r, v = rng.standard_normal(30), rng.standard_normal(31)
    d = rng.random(30) < 0.15
    _, ret = gae(r, v, d, 0.95, 1.0)
    np.testing.assert_allclose(ret, discounted_returns(r, d, v[-1], 0.95), atol=1e-10)


def test_gae_streams_are_independent():
    rng = np.random.default_rng(2)
    r, v, d = rng.standard_normal((20, 3)), rng.standard_normal((21, 3)), rng.random((20, 3)) < 0.1
    adv, _ = gae(r, v, d, 0.99, 0.95)
    for k in range(3):
        np.testing.assert_allclose(adv[:, k], gae(r[:, k], v[:, k], d[:, k], 0.99, 0.95)[0], atol=1e-14)


def test_ratio_is_one_before_the_update():
    rng = np.random.default_rng(0)
    pol = MlpPolicy(4, (3,), hidden=(8,), seed=0)
    pol.params[:] = rng.standard_normal(pol.n_params)
    obs = rng.standard_normal((16, 4))
    act = rng.integers(0, 3, (16, 1))
    _, _, stats = policy_loss_and_grad(pol, obs, act, pol.log_prob(obs, act), rng.standard_normal(16), np.zeros(16))
    assert stats["ratio_max_dev"] == 0.0 and stats["clip_fraction"] == 0.0


def test_combine_rewards():
    out = combine_rewards([1.0, 2.0], [0.5, 0.5], [0.1, 0.2], (1.0, 2.0, 10.0))
    np.testing.assert_allclose(out, [3.0, 5.0], atol=1e-15)
    np.testing.assert_array_equal(combine_rewards([1.0, 2.0], None, None, (1.0, 1.0, 1.0)), [1.0, 2.0])
    with pytest.raises(ValueError):
        combine_rewards([1.0], [1.0, 2.0], None)


def test_buffer_adds_truncation_bootstrap():
    buf = RolloutBuffer(2, 1, 1, 1)
    buf.add([[0.0]], [[0]], [0.0], [0.0], [[1.0]], [False], [1.0])
    buf.add([[1.0]], [[0]], [0.0], [0.0], [[2.0]], [True], [1.0], bootstrap=[0.5])
    batch = buf.finish(np.array([100.0]), gamma=1.0, lam=1.0)
    # the terminal flag cuts the final value; the bootstrap stands in for it
    np.testing.assert_allclose(batch["returns"], [2.5, 1.5])


def _batch(pol, rng, n=64):
    obs = rng.standard_normal((n, pol.obs_dim))
    act, logp, v = pol.act(obs, rng)
    return {"obs": obs, "actions": act, "logp": logp, "values": v,
            "advantages": rng.standard_normal(n), "returns": rng.standard_normal(n)}


def test_ppo_update_reports_unit_first_ratio():
    rng = np.random.default_rng(0)
    pol = MlpPolicy(4, (3,), hidden=(16,), seed=0)
    stats = ppo_update(pol, Adam(pol.n_params), _batch(pol, rng), PpoConfig(minibatch_size=16), rng)
    assert stats["first_ratio_max_dev"] == 0.0
    assert stats["entropy"] == pytest.approx(math.log(3), abs=1e-12)


def test_aborted_update_leaves_policy_untouched():
    rng = np.random.default_rng(0)
    pol = MlpPolicy(4, (3,), hidden=(16,), seed=0)
    opt = Adam(pol.n_params)
    ppo_update(pol, opt, _batch(pol, rng), PpoConfig(minibatch_size=16), rng)
    before, opt_before = pol.params.copy(), [np.copy(s) if isinstance(s, np.ndarray) else s for s in opt.state()]
    bad = _batch(pol, rng)
    bad["returns"][5] = np.nan
    with pytest.raises(UpdateAborted):
        ppo_update(pol, opt, bad, PpoConfig(minibatch_size=16), rng)
    assert np.array_equal(pol.params, before)
    for a, b in zip(opt.state(), opt_before):
        assert np.array_equal(a, b)


def test_ppo_config_validation():
    with pytest.raises(ValueError):
        PpoConfig(clip=1.5).validate()
    with pytest.raises(ValueError):
        PpoConfig(gamma=1.2).validate()


# --------------------------------------------------------------------------
# Imitation and curiosity
# --------------------------------------------------------------------------


def _biased_policy():
    """Uniform trunk output with head biases giving probabilities (1/2, 1/4, 1/4)."""
    pol = MlpPolicy(3, (3,), hidden=(4,), seed=0)
    _, b = pol.net.layer(len(pol.hidden))
    b[:3] = [math.log(2.0), 0.0, 0.0]
    return pol


def test_bc_loss_by_hand():
    pol = _biased_policy()
    obs = np.zeros((2, 3))
    assert bc_loss(pol, obs, [[0], [0]]) == pytest.approx(math.log(2), abs=1e-14)
    assert bc_loss(pol, obs, [[0], [1]]) == pytest.approx((math.log(2) + math.log(4)) / 2, abs=1e-14)
    assert action_agreement(pol, obs, [[0], [1]]) == 0.5


def test_gail_reward_at_undecided_discriminator_is_ln2():
    assert gail_reward_from_logit(0.0) == pytest.approx(math.log(2), abs=1e-15)
    d = Discriminator(3, (3,), seed=0)
    d.net.params[-Mlp.count((128, 1)):] = 0.0
    np.testing.assert_allclose(d.reward(np.ones((4, 3)), [[0], [1], [2], [0]]), math.log(2), atol=1e-15)


@given(st.floats(-50, 50))
def test_gail_reward_is_clamped(z):
    r = float(gail_reward_from_logit(z))
    assert 0.0 <= r <= 10.0
    if z < 9.0:
        assert r == pytest.approx(-math.log1p(-1.0 / (1.0 + math.exp(-z))), rel=1e-9, abs=1e-12)


def test_discriminator_separates_shifted_data():
    rng = np.random.default_rng(0)
    d = Discriminator(4, (3,), seed=0, learning_rate=1e-3)
    for _ in range(60):
        do = rng.standard_normal((64, 4)) + 2.0
        po = rng.standard_normal((64, 4)) - 2.0
        a = rng.integers(0, 3, (64, 1))
        gail_step(d, do, a, po, a)
    assert d.accuracy(do, a, po, a) > 0.95
    assert d.reward(po, a).mean() < d.reward(do, a).mean()


def test_gail_step_rejects_empty_batches():
    d = Discriminator(2, (3,))
    with pytest.raises(ValueError):
        gail_step(d, np.zeros((0, 2)), np.zeros((0, 1)), np.zeros((3, 2)), np.zeros((3, 1)))


def test_curiosity_falls_on_a_repeated_transition():
    icm = IcmModule(4, (3,), seed=0, learning_rate=1e-3)
    o, o2, a = np.ones((8, 4)), np.full((8, 4), 0.5), np.ones((8, 1), dtype=int)
    first = curiosity_step(icm, o, a, o2)[0].mean()
    for _ in range(50):
        last = curiosity_step(icm, o, a, o2)[0].mean()
    assert last < 0.2 * first


def test_curiosity_reward_is_half_squared_error():
    icm = IcmModule(3, (3,), seed=1)
    rng = np.random.default_rng(0)
    o, o2, a = rng.standard_normal((5, 3)), rng.standard_normal((5, 3)), rng.integers(0, 3, (5, 1))
    phi, phi2 = icm.features(o), icm.features(o2)
    onehot = np.eye(3)[a[:, 0]]
    pred = icm.forward_model(np.hstack([phi, onehot]))
    np.testing.assert_allclose(icm.reward(o, a, o2), 0.5 * ((pred - phi2) ** 2).sum(1), atol=1e-14)


# --------------------------------------------------------------------------
# Scripted demonstrations
# --------------------------------------------------------------------------


def _loop(points):
    return np.array(points, dtype=float)


def test_pure_pursuit_straight_line_needs_no_steering():
    xs = np.linspace(0, 20, 201)
    line = np.vstack([np.column_stack([xs, np.zeros_like(xs)]), np.column_stack([xs[::-1], np.full_like(xs, -30.0)])])
    _, steer = pure_pursuit((1.0, 0.0, 0.0), 1.0, line, f1tenth_params())
    assert steer == 0.0


def test_pure_pursuit_target_to_the_left_is_full_left():
    ys = np.linspace(0, 20, 201)
    line = np.vstack([np.column_stack([np.zeros_like(ys), ys]), np.column_stack([np.full_like(ys, -30.0), ys[::-1]])])
    p = f1tenth_params()
    _, steer = pure_pursuit((0.0, 0.0, 0.0), 0.0, line, p)
    assert steer == -p.steer_limit


def test_discretize_picks_nearest_levels():
    p = f1tenth_params()
    assert discretize_race_action(0.45, 0.3 * p.steer_limit, p).tolist() == [1, 1]
    assert discretize_race_action(0.9, -0.8 * p.steer_limit, p).tolist() == [2, 0]
    assert discretize_race_action(0.0, 0.6 * p.steer_limit, p).tolist() == [0, 2]


@pytest.fixture(scope="module")
def five_laps():
    return record_demos(5, seed=0, start_slot=0)


def test_demos_record_five_clean_laps(five_laps):
    d = five_laps
    assert d.n_episodes == 5 and sorted(set(d.episode.tolist())) == [0, 1, 2, 3, 4]
    assert d.obs.shape[1] == 28 and d.actions.shape[1] == 2
    assert len(d.metadata["lap_times"]) == 5 and all(t > 0 for t in d.metadata["lap_times"])


def test_demos_are_reproducible(five_laps):
    again = record_demos(5, seed=0, start_slot=0)
    assert np.array_equal(again.obs, five_laps.obs) and np.array_equal(again.actions, five_laps.actions)


def test_zero_laps_is_an_empty_dataset():
    d = record_demos(0)
    assert len(d) == 0 and d.obs.shape == (0, 28) and d.n_episodes == 0


def test_demo_split_sizes():
    d = DemoDataset(np.arange(20.0).reshape(10, 2), np.zeros((10, 1)), np.zeros(10))
    (tr_o, _), (ho_o, _) = d.split(0.2, np.random.default_rng(0))
    assert len(tr_o) == 8 and len(ho_o) == 2
    assert sorted(np.concatenate([tr_o, ho_o])[:, 0].tolist()) == list(range(0, 20, 2))


# --------------------------------------------------------------------------
# Tabular sanity task
# --------------------------------------------------------------------------


def test_value_iteration_on_the_corridor():
    env = CorridorEnv(10)
    V, greedy, _ = value_iteration(*env.transition_table(), gamma=0.9)
    np.testing.assert_allclose(V[:-1], [0.9 ** (8 - s) for s in range(9)], atol=1e-12)
    assert np.all(greedy[:-1] == 1)


def test_corridor_dynamics():
    env = CorridorEnv(4, seed=0)
    env.reset()
    env.state = 2
    res = env.step([1])
    assert res.rewards["extrinsic"][0] == 1.0 and res.episode_over
    env.reset()
    env.state = 0
    assert env.step([0]).obs[0, 0] == 1.0  # the left wall holds


# --------------------------------------------------------------------------
# Trainer
# --------------------------------------------------------------------------


def _small(updates=2, **kw):
    return TrainConfig(ppo=PpoConfig(horizon=64, minibatch_size=32, epochs=2), updates=updates, **kw)


def test_metric_columns_follow_enabled_terms():
    assert TrainConfig().columns() == BASE_COLUMNS
    cols = TrainConfig(reward_weights=(1.0, 1.0, 1.0), bc_weight=1.0).columns()
    assert cols[-4:] == ("bc_loss", "gail_reward", "curiosity_reward", "extrinsic_reward")


def test_learning_rate_decays_linearly():
    tr = Trainer(CorridorEnv(seed=0), _small(updates=4))
    seen = []
    for _ in range(4):
        tr.update()
        seen.append(tr.learners[0].optimizer.lr)
    np.testing.assert_allclose(seen, [3e-4, 2.25e-4, 1.5e-4, 0.75e-4], rtol=0, atol=1e-18)
    flat = Trainer(CorridorEnv(seed=0), _small(updates=4, lr_schedule="constant"))
    decayed = Trainer(CorridorEnv(seed=0), _small(updates=4))
    flat.update()
    decayed.update()
    # the first update uses the full rate under both schedules; the second does not
    assert np.array_equal(flat.learners[0].policy.params, decayed.learners[0].policy.params)
    flat.update()
    decayed.update()
    assert flat.learners[0].optimizer.lr == 3e-4
    assert not np.array_equal(flat.learners[0].policy.params, decayed.learners[0].policy.params)
    with pytest.raises(ValueError):
        _small(lr_schedule="cosine").validate()


def test_bc_weight_schedule(five_laps):
    from marl_drive.envs import RaceEnv

    annealed = Trainer(RaceEnv(), _small(updates=4, bc_weight=2.0), shared=False, demos=[five_laps, five_laps])
    constant = Trainer(RaceEnv(), _small(updates=4, bc_weight=2.0, bc_anneal_fraction=0.0), shared=False,
                       demos=[five_laps, five_laps])
    weights = []
    for k in range(4):
        annealed.update_index = constant.update_index = k
        weights.append((annealed._bc_weight(), constant._bc_weight()))
    assert weights == [(2.0, 2.0), (1.0, 2.0), (0.0, 2.0), (0.0, 2.0)]


def test_imitation_without_demos_is_refused():
    with pytest.raises(ValueError):
        Trainer(CorridorEnv(), _small(bc_weight=1.0))


def test_trainer_rows_and_determinism():
    def run():
        tr = Trainer(CorridorEnv(seed=0), _small(updates=3, seed=4))
        tr.train()
        return tr

    a, b = run(), run()
    assert [r["step"] for r in a.history] == [64, 128, 192]
    assert set(a.history[0]) == set(BASE_COLUMNS)
    assert np.array_equal(a.learners[0].policy.params, b.learners[0].policy.params)
    assert [r["cumulative_reward"] for r in a.history] == [r["cumulative_reward"] for r in b.history]


def test_individual_policies_are_separate():
    env = IntersectionEnv(IntersectionEnvConfig(n_agents=2, mode="multi"))
    tr = Trainer(env, _small(), shared=False)
    tr.train()
    assert [l.streams for l in tr.learners] == [[0], [1]]
    assert [r["agent"] for r in tr.history] == ["0", "1", "0", "1"]
    assert not np.array_equal(tr.learners[0].policy.params, tr.learners[1].policy.params)
    shared = Trainer(IntersectionEnv(IntersectionEnvConfig(n_agents=2, mode="multi")), _small(), shared=True)
    assert len(shared.learners) == 1 and shared.learners[0].streams == [0, 1]


def test_imitation_channels_are_logged(five_laps):
    from marl_drive.envs import RaceEnv

    cfg = _small(reward_weights=(1.0, 1.0, 1.0), bc_weight=1.0)
    tr = Trainer(RaceEnv(), cfg, shared=False, demos=[five_laps, five_laps])
    rows = tr.update()
    assert set(rows[0]) == set(cfg.columns())
    assert all(np.isfinite(r["bc_loss"]) and r["gail_reward"] >= 0 for r in rows)


# --------------------------------------------------------------------------
# Files
# --------------------------------------------------------------------------


def test_checkpoint_round_trip(tmp_path):
    pols = [MlpPolicy(5, (3, 2), hidden=(8,), seed=s, obs_scale=np.arange(1.0, 6.0)) for s in (1, 2)]
    path = tmp_path / "c.bin"
    save_checkpoint(str(path), pols, {"seed": 3})
    back, meta = load_checkpoint(str(path))
    assert meta == {"seed": 3}
    for a, b in zip(pols, back):
        assert np.array_equal(a.params, b.params) and np.array_equal(a.obs_scale, b.obs_scale)
        assert b.heads == (3, 2) and b.hidden == (8,)


def test_checkpoint_corruption_is_detected(tmp_path):
    path = tmp_path / "c.bin"
    save_checkpoint(str(path), MlpPolicy(3, hidden=(4,)))
    data = path.read_bytes()
    (tmp_path / "t.bin").write_bytes(data[:-8])
    with pytest.raises(CheckpointError):
        load_checkpoint(str(tmp_path / "t.bin"))
    (tmp_path / "m.bin").write_bytes(b"XXXXXXXX" + data[8:])
    with pytest.raises(CheckpointError):
        load_checkpoint(str(tmp_path / "m.bin"))


def test_demo_file_round_trip(tmp_path, five_laps):
    path = tmp_path / "d.bin"
    save_demos(str(path), five_laps, {"seed": 0})
    back = load_demos(str(path))
    assert np.array_equal(back.obs, five_laps.obs) and np.array_equal(back.actions, five_laps.actions)
    assert np.array_equal(back.episode, five_laps.episode) and back.metadata == five_laps.metadata
    with pytest.raises(DemoFileError):
        (tmp_path / "bad.bin").write_bytes(b"MDDEMO01\x00")
        load_demos(str(tmp_path / "bad.bin"))
