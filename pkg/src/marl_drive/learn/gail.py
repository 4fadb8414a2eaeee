"""Adversarial imitation: a discriminator between demonstrated and policy behaviour."""
from __future__ import annotations

import numpy as np

from .nn import Adam, Mlp, one_hot

REWARD_MAX = 10.0


def _softplus(z):
    return np.logaddexp(0.0, z)


def _sigmoid(z):
    return np.exp(-_softplus(-z))


class Discriminator:
    """``(obs ⊕ one-hot action) -> 128 -> 128 -> D in (0, 1)``; demos are labelled 1."""

    def __init__(self, obs_dim: int, heads=(3,), hidden=(128, 128), seed: int = 0, params=None,
                 obs_scale=None, learning_rate: float = 3e-4):
        self.obs_dim = int(obs_dim)
        self.heads = tuple(int(h) for h in heads)
        self.hidden = tuple(hidden)
        self.net = Mlp((self.obs_dim + sum(self.heads), *self.hidden, 1), np.random.default_rng(seed),
                       params=params)
        self.obs_scale = np.ones(self.obs_dim) if obs_scale is None else np.asarray(obs_scale, dtype=float)
        self.optimizer = Adam(self.net.n_params, lr=learning_rate)

    @property
    def params(self) -> np.ndarray:
        return self.net.params

    def _input(self, obs, actions) -> np.ndarray:
        obs = np.atleast_2d(np.asarray(obs, dtype=float)) * self.obs_scale
        return np.hstack([obs, one_hot(actions, self.heads)])

    def logit(self, obs, actions) -> np.ndarray:
        return self.net(self._input(obs, actions))[:, 0]

    def prob(self, obs, actions) -> np.ndarray:
        """D(o, a): the probability that (o, a) came from a demonstration."""
        return _sigmoid(self.logit(obs, actions))

    def reward(self, obs, actions) -> np.ndarray:
        """-log(1 - D), clamped to [0, 10]."""
        return gail_reward_from_logit(self.logit(obs, actions))

    def loss_and_grad(self, demo_obs, demo_act, pol_obs, pol_act):
        """Binary cross-entropy: mean over demos of -log D plus mean over
        policy samples of -log(1 - D)."""
        x = np.vstack([self._input(demo_obs, demo_act), self._input(pol_obs, pol_act)])
        nd = len(demo_obs)
        npol = len(pol_obs)
        out, cache = self.net.forward(x)
        z = out[:, 0]
        zd, zp = z[:nd], z[nd:]
        loss = _softplus(-zd).mean() + _softplus(zp).mean()
        dz = np.empty_like(z)
        dz[:nd] = -_sigmoid(-zd) / nd
        dz[nd:] = _sigmoid(zp) / npol
        grad, _ = self.net.backward(cache, dz[:, None])
        accuracy = (np.sum(zd > 0) + np.sum(zp < 0)) / (nd + npol)
        return float(loss), grad, float(accuracy)

    def accuracy(self, demo_obs, demo_act, pol_obs, pol_act) -> float:
        zd = self.logit(demo_obs, demo_act)
        zp = self.logit(pol_obs, pol_act)
        return float((np.sum(zd > 0) + np.sum(zp < 0)) / (len(zd) + len(zp)))


def gail_reward_from_logit(z) -> np.ndarray:
    # -log(1 - sigmoid(z)) == softplus(z)
    return np.clip(_softplus(np.asarray(z, dtype=float)), 0.0, REWARD_MAX)


def gail_step(disc: Discriminator, demo_obs, demo_act, pol_obs, pol_act) -> dict:
    """One optimiser step on the discriminator; returns loss and accuracy
    measured before the step.  The updated discriminator's ``reward`` method is
    the reward function."""
    if len(demo_obs) == 0 or len(pol_obs) == 0:
        raise ValueError("both batches must be nonempty")
    loss, grad, acc = disc.loss_and_grad(demo_obs, demo_act, pol_obs, pol_act)
    disc.optimizer.step(disc.params, grad)
    return {"loss": loss, "accuracy": acc}
