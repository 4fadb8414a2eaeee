"""Proximal policy optimisation: advantage estimation, rollout storage, updates."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import Adam, clip_grad_norm
from .policy import MlpPolicy, policy_loss_and_grad

CHANNELS = ("extrinsic", "gail", "curiosity")


class UpdateAborted(RuntimeError):
    """The loss or gradient became non-finite; parameters were left unchanged."""


@dataclass(frozen=True)
class PpoConfig:
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip: float = 0.2
    epochs: int = 3
    minibatch_size: int = 512
    horizon: int = 2048
    learning_rate: float = 3e-4
    entropy_coef: float = 0.005
    value_coef: float = 0.5
    max_grad_norm: float = 0.5

    def validate(self) -> None:
        if not (0.0 < self.gamma <= 1.0) or not (0.0 < self.gae_lambda <= 1.0):
            raise ValueError("gamma and gae_lambda must lie in (0, 1]")
        if not (0.0 < self.clip < 1.0):
            raise ValueError("clip must lie in (0, 1)")
        if min(self.epochs, self.minibatch_size, self.horizon) < 1:
            raise ValueError("epochs, minibatch_size and horizon must be positive")
        if self.learning_rate <= 0 or self.entropy_coef < 0 or self.value_coef < 0 or self.max_grad_norm < 0:
            raise ValueError("learning rate must be positive and coefficients non-negative")


def gae(rewards, values, dones, gamma: float, lam: float):
    """Generalised advantage estimates along axis 0.

    ``values`` has one more row than ``rewards``: the last row bootstraps the
    value after the final step.  ``dones[t]`` ends the episode after step t,
    cutting both the bootstrap and the advantage recursion.  Extra trailing
    axes are independent streams.  Returns (advantages, returns).
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    dones = np.asarray(dones, dtype=float)
    T = rewards.shape[0]
    if values.shape[0] != T + 1 or dones.shape != rewards.shape:
        raise ValueError("need len(values) == len(rewards) + 1 and matching dones")
    adv = np.zeros_like(rewards)
    last = np.zeros(rewards.shape[1:])
    for t in range(T - 1, -1, -1):
        live = 1.0 - dones[t]
        delta = rewards[t] + gamma * values[t + 1] * live - values[t]
        last = delta + gamma * lam * live * last
        adv[t] = last
    return adv, adv + values[:-1]


def combine_rewards(extrinsic, gail=None, curiosity=None, weights=(1.0, 1.0, 1.0)) -> np.ndarray:
    """Weighted sum of the extrinsic, GAIL and curiosity reward streams."""
    e = np.asarray(extrinsic, dtype=float)
    out = weights[0] * e
    for stream, w in ((gail, weights[1]), (curiosity, weights[2])):
        if w != 0.0 and stream is not None:
            stream = np.asarray(stream, dtype=float)
            if stream.shape != e.shape:
                raise ValueError("reward streams must have equal lengths")
            out = out + w * stream
    return out


class RolloutBuffer:
    """Fixed-horizon storage, one column per agent stream."""

    def __init__(self, horizon: int, n_streams: int, obs_dim: int, n_heads: int):
        self.horizon, self.n_streams = horizon, n_streams
        self.obs = np.zeros((horizon, n_streams, obs_dim))
        self.next_obs = np.zeros((horizon, n_streams, obs_dim))
        self.actions = np.zeros((horizon, n_streams, n_heads), dtype=np.int64)
        self.logp = np.zeros((horizon, n_streams))
        self.values = np.zeros((horizon, n_streams))
        self.dones = np.zeros((horizon, n_streams), dtype=bool)
        # value of the terminal observation for truncated steps, 0 otherwise
        self.bootstrap = np.zeros((horizon, n_streams))
        self.rewards = {c: np.zeros((horizon, n_streams)) for c in CHANNELS}
        self.t = 0

    @property
    def full(self) -> bool:
        return self.t >= self.horizon

    def add(self, obs, actions, logp, values, next_obs, dones, extrinsic, bootstrap=None) -> None:
        t = self.t
        if t >= self.horizon:
            raise IndexError("rollout buffer is full")
        self.obs[t], self.actions[t], self.logp[t], self.values[t] = obs, actions, logp, values
        self.next_obs[t], self.dones[t] = next_obs, dones
        self.rewards["extrinsic"][t] = extrinsic
        if bootstrap is not None:
            self.bootstrap[t] = bootstrap
        self.t += 1

    def total_reward(self, weights) -> np.ndarray:
        r = combine_rewards(self.rewards["extrinsic"], self.rewards["gail"], self.rewards["curiosity"], weights)
        return r + self.bootstrap

    def finish(self, last_values, gamma: float, lam: float, weights=(1.0, 0.0, 0.0)) -> dict:
        """Advantages and returns, flattened to (horizon * n_streams) samples in
        time-major order."""
        values = np.vstack([self.values, np.asarray(last_values, dtype=float)[None, :]])
        adv, ret = gae(self.total_reward(weights), values, self.dones, gamma, lam)
        n = self.horizon * self.n_streams
        return {
            "obs": self.obs.reshape(n, -1),
            "next_obs": self.next_obs.reshape(n, -1),
            "actions": self.actions.reshape(n, -1),
            "logp": self.logp.reshape(n),
            "values": self.values.reshape(n),
            "advantages": adv.reshape(n),
            "returns": ret.reshape(n),
        }


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    adv = np.asarray(adv, dtype=float)
    std = adv.std()
    return (adv - adv.mean()) / (std + 1e-8) if std > 0 else adv - adv.mean()


def ppo_update(policy: MlpPolicy, optimizer: Adam, batch: dict, config: PpoConfig, rng: np.random.Generator,
               demos=None, bc_weight: float = 0.0) -> dict:
    """Clipped-surrogate update over ``config.epochs`` passes of shuffled minibatches.

    ``demos`` is an optional (obs, actions) pair; when ``bc_weight`` > 0 each
    minibatch adds the behavioural-cloning loss of an equally sized demo sample.
    Raises UpdateAborted (restoring parameters and optimiser state) if any loss
    or gradient is non-finite.
    """
    obs, actions, old_logp = batch["obs"], batch["actions"], batch["logp"]
    adv = normalize_advantages(batch["advantages"])
    returns = batch["returns"]
    n = len(obs)
    if n == 0:
        raise ValueError("empty batch")
    saved_params = policy.params.copy()
    saved_opt = optimizer.state()
    stats = {"entropy": float(policy.entropy(obs).mean())}
    sums: dict = {}
    count = 0
    use_bc = bc_weight > 0.0 and demos is not None and len(demos[0]) > 0
    for epoch in range(config.epochs):
        perm = rng.permutation(n)
        for start in range(0, n, config.minibatch_size):
            idx = perm[start:start + config.minibatch_size]
            bc_obs = bc_act = None
            if use_bc:
                pick = rng.integers(0, len(demos[0]), size=len(idx))
                bc_obs, bc_act = demos[0][pick], demos[1][pick]
            loss, grad, st = policy_loss_and_grad(
                policy, obs[idx], actions[idx], old_logp[idx], adv[idx], returns[idx],
                config.clip, config.value_coef, config.entropy_coef, bc_obs, bc_act, bc_weight)
            if not (np.isfinite(loss) and np.all(np.isfinite(grad))):
                policy.params[:] = saved_params
                optimizer.restore(saved_opt)
                raise UpdateAborted(f"non-finite loss in epoch {epoch}; update discarded")
            if count == 0:
                stats["first_ratio_max_dev"] = st["ratio_max_dev"]
            clip_grad_norm(grad, config.max_grad_norm)
            optimizer.step(policy.params, grad, config.learning_rate)
            for k, v in st.items():
                if k != "entropy":
                    sums[k] = sums.get(k, 0.0) + v
            count += 1
    if not np.all(np.isfinite(policy.params)):
        policy.params[:] = saved_params
        optimizer.restore(saved_opt)
        raise UpdateAborted("parameters became non-finite; update discarded")
    for k, v in sums.items():
        stats[k] = v / count
    return stats
