"""Small fully connected networks in numpy with analytic gradients.

Parameters live in one flat float64 vector so optimisers, checkpoints and
finite-difference checks all see the same object.  Layer ``i`` computes
``x @ W_i + b_i``; every layer but the last is followed by ``tanh``.
"""
from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Input width does not match the network."""


class Mlp:
    def __init__(self, sizes, rng: np.random.Generator | None = None, final_scale: float = 1.0,
                 params: np.ndarray | None = None):
        self.sizes = tuple(int(s) for s in sizes)
        if len(self.sizes) < 2 or min(self.sizes) < 1:
            raise ValueError("an MLP needs at least an input and an output width")
        self._slices = []
        off = 0
        for n_in, n_out in zip(self.sizes[:-1], self.sizes[1:]):
            w = slice(off, off + n_in * n_out)
            off += n_in * n_out
            b = slice(off, off + n_out)
            off += n_out
            self._slices.append((w, b, n_in, n_out))
        self.n_params = off
        if params is not None:
            params = np.asarray(params, dtype=float)
            if params.shape != (off,):
                raise ShapeError(f"expected {off} parameters, got {params.shape}")
            self.params = params.copy()
        else:
            self.params = np.zeros(off)
            rng = rng if rng is not None else np.random.default_rng(0)
            last = len(self._slices) - 1
            for i, (w, b, n_in, n_out) in enumerate(self._slices):
                scale = 1.0 / np.sqrt(n_in)
                if i == last:
                    scale *= final_scale
                if scale != 0.0:
                    self.params[w] = scale * rng.standard_normal(n_in * n_out)

    @staticmethod
    def count(sizes) -> int:
        sizes = list(sizes)
        return sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))

    def layer(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        """Views (W, b) of layer ``i`` into the flat parameter vector."""
        w, b, n_in, n_out = self._slices[i]
        return self.params[w].reshape(n_in, n_out), self.params[b]

    def forward(self, x: np.ndarray):
        """Returns (output, cache); ``cache`` feeds ``backward``."""
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.sizes[0]:
            raise ShapeError(f"expected input width {self.sizes[0]}, got shape {x.shape}")
        acts = [x]
        h = x
        last = len(self._slices) - 1
        for i in range(len(self._slices)):
            W, b = self.layer(i)
            h = h @ W + b
            if i != last:
                h = np.tanh(h)
            acts.append(h)
        return h, acts

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, cache, d_out: np.ndarray):
        """Gradient of a scalar loss given dL/d(output).  Returns (dθ, dL/dx)."""
        grad = np.zeros(self.n_params)
        delta = np.asarray(d_out, dtype=float)
        last = len(self._slices) - 1
        for i in range(last, -1, -1):
            w, b, n_in, n_out = self._slices[i]
            if i != last:
                delta = delta * (1.0 - cache[i + 1] ** 2)
            grad[w] = (cache[i].T @ delta).ravel()
            grad[b] = delta.sum(axis=0)
            W = self.params[w].reshape(n_in, n_out)
            delta = delta @ W.T
        return grad, delta


class Adam:
    """First-order adaptive-moment optimiser with bias correction."""

    def __init__(self, n_params: int, lr: float = 3e-4, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(n_params)
        self.v = np.zeros(n_params)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray, lr: float | None = None) -> None:
        """Update ``params`` in place."""
        lr = self.lr if lr is None else lr
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1 ** self.t)
        v_hat = self.v / (1 - self.beta2 ** self.t)
        params -= lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state(self):
        return (self.m.copy(), self.v.copy(), self.t)

    def restore(self, state) -> None:
        self.m, self.v, self.t = state[0].copy(), state[1].copy(), state[2]


def clip_grad_norm(grad: np.ndarray, max_norm: float) -> float:
    """Scale ``grad`` in place to at most ``max_norm``; returns the original norm."""
    norm = float(np.sqrt(grad @ grad))
    if max_norm > 0 and norm > max_norm:
        grad *= max_norm / norm
    return norm


# --------------------------------------------------------------------------
# Categorical distributions over one or more independent heads
# --------------------------------------------------------------------------


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def head_slices(heads) -> list[slice]:
    out, off = [], 0
    for n in heads:
        out.append(slice(off, off + n))
        off += n
    return out


def categorical_entropy(logp: np.ndarray) -> np.ndarray:
    return -(np.exp(logp) * logp).sum(axis=-1)


def one_hot(actions: np.ndarray, heads) -> np.ndarray:
    """(B, n_heads) indices -> (B, sum(heads)) concatenated one-hot codes."""
    actions = np.asarray(actions, dtype=int).reshape(len(actions), -1)
    out = np.zeros((actions.shape[0], sum(heads)))
    for h, sl in enumerate(head_slices(heads)):
        out[np.arange(actions.shape[0]), sl.start + actions[:, h]] = 1.0
    return out
