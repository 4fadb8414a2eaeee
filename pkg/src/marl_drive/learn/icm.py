"""Curiosity: an intrinsic reward from a learned forward model's prediction error.

The encoder maps observations to 64 features.  A forward model predicts the
next features from the current features and the action; an inverse model
predicts the action from consecutive features.  The intrinsic reward is half
the squared forward-prediction error.  The encoder is trained only through
the inverse model (forward-model gradients stop at the features), which keeps
it from collapsing the features to make prediction trivial.
"""
from __future__ import annotations

import numpy as np

from .nn import Adam, Mlp, head_slices, log_softmax, one_hot

FEATURE_DIM = 64


class IcmModule:
    def __init__(self, obs_dim: int, heads=(3,), hidden: int = 128, seed: int = 0, obs_scale=None,
                 learning_rate: float = 3e-4):
        self.obs_dim = int(obs_dim)
        self.heads = tuple(int(h) for h in heads)
        rng = np.random.default_rng(seed)
        n_act = sum(self.heads)
        self.encoder = Mlp((self.obs_dim, hidden, FEATURE_DIM), rng)
        self.forward_model = Mlp((FEATURE_DIM + n_act, hidden, FEATURE_DIM), rng)
        self.inverse_model = Mlp((2 * FEATURE_DIM, hidden, n_act), rng)
        # one flat parameter vector; each network's parameters are views into it
        nets = (self.encoder, self.forward_model, self.inverse_model)
        self.params = np.concatenate([m.params for m in nets])
        self._ranges = []
        off = 0
        for m in nets:
            m.params = self.params[off:off + m.n_params]
            self._ranges.append(slice(off, off + m.n_params))
            off += m.n_params
        self.n_params = off
        self.obs_scale = np.ones(self.obs_dim) if obs_scale is None else np.asarray(obs_scale, dtype=float)
        self.optimizer = Adam(self.n_params, lr=learning_rate)

    def features(self, obs) -> np.ndarray:
        return self.encoder(np.atleast_2d(np.asarray(obs, dtype=float)) * self.obs_scale)

    def reward(self, obs, actions, next_obs) -> np.ndarray:
        """½‖forward(φ(o), a) − φ(o′)‖² per sample."""
        phi, phi_next = self.features(obs), self.features(next_obs)
        pred = self.forward_model(np.hstack([phi, one_hot(actions, self.heads)]))
        return 0.5 * np.sum((pred - phi_next) ** 2, axis=1)

    def loss_and_grad(self, obs, actions, next_obs):
        """Forward loss (mean of the per-sample reward) plus the inverse model's
        cross-entropy summed over heads, equally weighted."""
        obs = np.atleast_2d(np.asarray(obs, dtype=float)) * self.obs_scale
        next_obs = np.atleast_2d(np.asarray(next_obs, dtype=float)) * self.obs_scale
        n = len(obs)
        actions = np.asarray(actions, dtype=int).reshape(n, -1)
        rows = np.arange(n)
        both = np.vstack([obs, next_obs])
        phi_all, enc_cache = self.encoder.forward(both)
        phi, phi_next = phi_all[:n], phi_all[n:]

        fwd_out, fwd_cache = self.forward_model.forward(np.hstack([phi, one_hot(actions, self.heads)]))
        err = fwd_out - phi_next
        per_sample = 0.5 * np.sum(err ** 2, axis=1)
        forward_loss = per_sample.mean()
        g_fwd, _ = self.forward_model.backward(fwd_cache, err / n)

        logits, inv_cache = self.inverse_model.forward(np.hstack([phi, phi_next]))
        d_logits = np.zeros_like(logits)
        inverse_loss = 0.0
        for h, sl in enumerate(head_slices(self.heads)):
            lp = log_softmax(logits[:, sl])
            inverse_loss -= lp[rows, actions[:, h]].mean()
            g = np.exp(lp)
            g[rows, actions[:, h]] -= 1.0
            d_logits[:, sl] = g / n
        g_inv, d_inv_in = self.inverse_model.backward(inv_cache, d_logits)
        d_phi = np.vstack([d_inv_in[:, :FEATURE_DIM], d_inv_in[:, FEATURE_DIM:]])
        g_enc, _ = self.encoder.backward(enc_cache, d_phi)

        grad = np.concatenate([g_enc, g_fwd, g_inv])
        stats = {"forward_loss": float(forward_loss), "inverse_loss": float(inverse_loss)}
        return float(forward_loss + inverse_loss), grad, per_sample, stats


def curiosity_step(icm: IcmModule, obs, actions, next_obs):
    """One optimiser step on a transition batch.  Returns the per-sample
    curiosity reward measured before the step, and loss statistics."""
    loss, grad, reward, stats = icm.loss_and_grad(obs, actions, next_obs)
    icm.optimizer.step(icm.params, grad)
    stats["loss"] = loss
    return reward, stats
