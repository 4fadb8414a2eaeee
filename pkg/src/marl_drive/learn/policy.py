"""Policy/value network: a tanh MLP trunk with categorical heads and a value."""
from __future__ import annotations

import numpy as np

from .nn import Mlp, ShapeError, categorical_entropy, head_slices, log_softmax

HIDDEN = (128, 128, 128)


class MlpPolicy:
    """``obs -> 128 -> 128 -> 128 -> (logits of every head, value)``.

    The last layer starts at zero, so a fresh policy is uniform over every head
    and predicts a value of 0.  ``obs_scale`` multiplies observations before
    the first layer (a fixed per-feature scaling, stored with the parameters).
    """

    def __init__(self, obs_dim: int, heads=(3,), hidden=HIDDEN, seed: int = 0, params=None,
                 obs_scale=None):
        self.obs_dim = int(obs_dim)
        self.heads = tuple(int(h) for h in heads)
        self.hidden = tuple(int(h) for h in hidden)
        self.net = Mlp((self.obs_dim, *self.hidden, sum(self.heads) + 1), np.random.default_rng(seed),
                       final_scale=0.0, params=params)
        self._slices = head_slices(self.heads)
        scale = np.ones(self.obs_dim) if obs_scale is None else np.asarray(obs_scale, dtype=float)
        if scale.shape != (self.obs_dim,):
            raise ShapeError(f"obs_scale must have length {self.obs_dim}")
        self.obs_scale = scale.copy()

    @property
    def params(self) -> np.ndarray:
        return self.net.params

    @property
    def n_params(self) -> int:
        return self.net.n_params

    def copy(self) -> "MlpPolicy":
        return MlpPolicy(self.obs_dim, self.heads, self.hidden, params=self.params, obs_scale=self.obs_scale)

    # ------------------------------------------------------------------
    def _input(self, obs) -> np.ndarray:
        obs = np.asarray(obs, dtype=float)
        if obs.ndim == 1:
            obs = obs[None, :]
        if obs.ndim != 2 or obs.shape[1] != self.obs_dim:
            raise ShapeError(f"expected observations of width {self.obs_dim}, got shape {obs.shape}")
        return obs * self.obs_scale

    def forward_cached(self, obs):
        out, cache = self.net.forward(self._input(obs))
        return out[:, :-1], out[:, -1], cache

    def forward(self, obs) -> tuple[np.ndarray, np.ndarray]:
        """(logits (B, sum(heads)), value (B,))."""
        logits, value, _ = self.forward_cached(obs)
        return logits, value

    def head_log_probs(self, logits: np.ndarray) -> list[np.ndarray]:
        return [log_softmax(logits[:, sl]) for sl in self._slices]

    def entropy(self, obs) -> np.ndarray:
        """Per-sample entropy, averaged over heads."""
        logits, _ = self.forward(obs)
        return np.mean([categorical_entropy(lp) for lp in self.head_log_probs(logits)], axis=0)

    def log_prob(self, obs, actions) -> np.ndarray:
        logits, _ = self.forward(obs)
        actions = np.asarray(actions, dtype=int).reshape(len(logits), -1)
        rows = np.arange(len(logits))
        return sum(lp[rows, actions[:, h]] for h, lp in enumerate(self.head_log_probs(logits)))

    def act(self, obs, rng: np.random.Generator | None = None, greedy: bool = False):
        """Sample (or argmax) one action per head.

        Returns (actions (B, n_heads) int, joint log-prob (B,), value (B,)).
        """
        logits, value = self.forward(obs)
        rows = np.arange(len(logits))
        actions = np.empty((len(logits), len(self.heads)), dtype=np.int64)
        logp = np.zeros(len(logits))
        for h, lp in enumerate(self.head_log_probs(logits)):
            if greedy:
                a = lp.argmax(axis=1)
            else:
                cdf = np.cumsum(np.exp(lp), axis=1)
                u = rng.random(len(lp))[:, None] * cdf[:, -1:]
                a = np.minimum((u >= cdf).sum(axis=1), lp.shape[1] - 1)
            actions[:, h] = a
            logp += lp[rows, a]
        return actions, logp, value


def policy_loss_and_grad(policy: MlpPolicy, obs, actions, old_logp, advantages, returns,
                         clip: float = 0.2, value_coef: float = 0.5, entropy_coef: float = 0.005,
                         bc_obs=None, bc_actions=None, bc_weight: float = 0.0):
    """Clipped-surrogate PPO loss with value and entropy terms (plus optional BC).

    ``loss = -mean(min(r A, clip(r) A)) + c_v * 0.5 mean((V - R)^2) - c_e * H
    + w_bc * NLL(demo actions)`` with ``H`` the per-sample entropy averaged over
    heads.  Returns (loss, gradient, stats).
    """
    logits, value, cache = policy.forward_cached(obs)
    n = len(logits)
    rows = np.arange(n)
    actions = np.asarray(actions, dtype=int).reshape(n, -1)
    lps = policy.head_log_probs(logits)
    n_heads = len(lps)
    logp = sum(lp[rows, actions[:, h]] for h, lp in enumerate(lps))

    ratio = np.exp(logp - old_logp)
    clipped = np.clip(ratio, 1.0 - clip, 1.0 + clip)
    surr_a = ratio * advantages
    surr_b = clipped * advantages
    policy_loss = -np.mean(np.minimum(surr_a, surr_b))
    d_logp = -np.where(surr_a <= surr_b, surr_a, 0.0) / n

    entropies = [categorical_entropy(lp) for lp in lps]
    entropy = float(np.mean(entropies)) if n_heads else 0.0
    value_loss = 0.5 * np.mean((value - returns) ** 2)

    d_out = np.zeros((n, logits.shape[1] + 1))
    for h, (lp, sl) in enumerate(zip(lps, policy._slices)):
        p = np.exp(lp)
        g = -p * d_logp[:, None]
        g[rows, actions[:, h]] += d_logp
        # dH/dz = -p (log p + H); the loss carries -c_e * mean(H)
        g += (entropy_coef / (n * n_heads)) * p * (lp + entropies[h][:, None])
        d_out[:, sl] = g
    d_out[:, -1] = value_coef * (value - returns) / n
    grad, _ = policy.net.backward(cache, d_out)
    loss = policy_loss + value_coef * value_loss - entropy_coef * entropy

    stats = {
        "policy_loss": float(policy_loss),
        "value_loss": float(value_loss),
        "entropy": entropy,
        "clip_fraction": float(np.mean(np.abs(ratio - 1.0) > clip)),
        "ratio_max_dev": float(np.max(np.abs(ratio - 1.0))) if n else 0.0,
        "approx_kl": float(np.mean(old_logp - logp)),
    }
    if bc_weight > 0.0 and bc_obs is not None and len(bc_obs):
        bc, bc_grad = bc_loss_and_grad(policy, bc_obs, bc_actions)
        loss += bc_weight * bc
        grad += bc_weight * bc_grad
        stats["bc_loss"] = bc
    return float(loss), grad, stats


def bc_loss_and_grad(policy: MlpPolicy, obs, actions):
    """Mean negative log-likelihood of demonstrated actions (summed over heads)."""
    logits, _, cache = policy.forward_cached(obs)
    n = len(logits)
    rows = np.arange(n)
    actions = np.asarray(actions, dtype=int).reshape(n, -1)
    d_out = np.zeros((n, logits.shape[1] + 1))
    nll = 0.0
    for h, (lp, sl) in enumerate(zip(policy.head_log_probs(logits), policy._slices)):
        nll -= lp[rows, actions[:, h]].sum()
        g = np.exp(lp)
        g[rows, actions[:, h]] -= 1.0
        d_out[:, sl] = g / n
    grad, _ = policy.net.backward(cache, d_out)
    return float(nll / n), grad


def bc_loss(policy: MlpPolicy, obs, actions) -> float:
    return bc_loss_and_grad(policy, obs, actions)[0]


def action_agreement(policy: MlpPolicy, obs, actions) -> float:
    """Fraction of samples whose greedy action matches on every head."""
    greedy, _, _ = policy.act(obs, greedy=True)
    actions = np.asarray(actions, dtype=int).reshape(len(greedy), -1)
    return float(np.mean(np.all(greedy == actions, axis=1)))
