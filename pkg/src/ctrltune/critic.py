"""State-value critic: tanh MLP with hand-written backprop, Adam, and GAE.

Everything here works on rewards (larger is better); callers holding costs
negate them first.
"""
from __future__ import annotations

import math
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "Adam",
    "ValueNet",
    "CriticDivergence",
    "gae",
    "compute_value_targets",
    "compute_advantage",
    "train_critic",
]


class CriticDivergence(RuntimeError):
    pass


class Adam:
    """Adam on a flat parameter vector; ``step`` descends along ``grad``."""

    def __init__(self, size: int, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def direction(self, grad, lr: Optional[float] = None) -> np.ndarray:
        """Update the moments with ``grad`` and return the step to subtract."""
        lr = self.lr if lr is None else lr
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        mhat = self.m / (1 - self.beta1**self.t)
        vhat = self.v / (1 - self.beta2**self.t)
        return lr * mhat / (np.sqrt(vhat) + self.eps)

    def step(self, params, grad, lr: Optional[float] = None) -> np.ndarray:
        return params - self.direction(grad, lr)

    def state_dict(self) -> dict:
        return {"m": self.m.copy(), "v": self.v.copy(), "t": self.t}

    def load_state_dict(self, state: dict) -> None:
        self.m = np.array(state["m"], dtype=float)
        self.v = np.array(state["v"], dtype=float)
        self.t = int(state["t"])


class ValueNet:
    """``obs -> hidden... -> 1`` MLP, tanh hidden units, linear output.

    All weights live in one flat float64 vector ``self.w``; the per-layer
    matrices are views into it, so in-place updates of ``w`` are seen by the
    layers.
    """

    def __init__(
        self,
        obs_dim: int,
        hidden: Sequence[int] = (256, 256),
        rng: Optional[np.random.Generator] = None,
        input_scale=None,
    ):
        rng = np.random.default_rng(0) if rng is None else rng
        self.obs_dim = int(obs_dim)
        self.sizes = (self.obs_dim, *[int(h) for h in hidden], 1)
        self.shapes = []
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            self.shapes += [(fan_in, fan_out), (fan_out,)]
        self.w = np.zeros(sum(int(np.prod(s)) for s in self.shapes))
        self._bind()
        # hidden layers: symmetric fan-in uniform; output layer stays zero
        for i in range(len(self.sizes) - 2):
            bound = 1.0 / math.sqrt(self.sizes[i])
            self.weights[i][...] = rng.uniform(-bound, bound, self.weights[i].shape)
            self.biases[i][...] = rng.uniform(-bound, bound, self.biases[i].shape)
        if input_scale is None:
            self.input_scale = None
        else:
            self.input_scale = np.broadcast_to(np.asarray(input_scale, dtype=float), (self.obs_dim,)).copy()

    def _bind(self):
        self.weights, self.biases = [], []
        off = 0
        for k, shape in enumerate(self.shapes):
            n = int(np.prod(shape))
            view = self.w[off:off + n].reshape(shape)
            (self.weights if k % 2 == 0 else self.biases).append(view)
            off += n

    @property
    def n_params(self) -> int:
        return self.w.size

    def set_flat(self, w) -> None:
        w = np.asarray(w, dtype=float)
        if w.shape != self.w.shape:
            raise ValueError(f"expected {self.w.shape} parameters, got {w.shape}")
        self.w[...] = w

    def _inputs(self, s):
        x = np.asarray(s, dtype=float)
        single = x.ndim == 1
        x = np.atleast_2d(x)
        if x.shape[1] != self.obs_dim:
            raise ValueError(f"observation dim {x.shape[1]} != {self.obs_dim}")
        if self.input_scale is not None:
            x = x * self.input_scale
        return x, single

    def forward(self, s):
        """Scalar value for one observation, or a 1-D array for a batch."""
        x, single = self._inputs(s)
        h = x
        for W, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.tanh(h @ W + b)
        v = (h @ self.weights[-1] + self.biases[-1])[:, 0]
        return float(v[0]) if single else v

    __call__ = forward

    def loss_and_grad(self, states, targets):
        """Mean of ``0.5 * (V(s) - G)^2`` and its exact gradient w.r.t. ``w``."""
        x, _ = self._inputs(states)
        g_t = np.asarray(targets, dtype=float).reshape(-1)
        if len(g_t) != len(x) or len(x) == 0:
            raise ValueError("need a nonempty batch with one target per state")
        acts = [x]
        h = x
        for W, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.tanh(h @ W + b)
            acts.append(h)
        v = (h @ self.weights[-1] + self.biases[-1])[:, 0]
        err = v - g_t
        loss = 0.5 * float(np.mean(err * err))

        grad = np.empty_like(self.w)
        gw, gb = [], []
        delta = (err / len(x))[:, None]
        for layer in range(len(self.weights) - 1, -1, -1):
            a_in = acts[layer]
            gw.append(a_in.T @ delta)
            gb.append(delta.sum(axis=0))
            if layer > 0:
                delta = (delta @ self.weights[layer].T) * (1.0 - a_in * a_in)
        gw.reverse()
        gb.reverse()
        off = 0
        for k in range(len(self.weights)):
            for arr in (gw[k], gb[k]):
                grad[off:off + arr.size] = arr.ravel()
                off += arr.size
        return loss, grad


def gae(rewards, values, next_values, terminated, done, gamma: float, lam: float) -> np.ndarray:
    """Per-step GAE advantages over a trajectory that may contain boundaries.

    ``terminated[k]`` zeroes the bootstrap ``next_values[k]``; ``done[k]``
    (termination or truncation) cuts the backward recursion. The recursion is
    also cut after the last transition, whose residual bootstraps from
    ``next_values[-1]``.
    """
    r = np.asarray(rewards, dtype=float)
    v = np.asarray(values, dtype=float)
    nv = np.where(np.asarray(terminated, dtype=bool), 0.0, np.asarray(next_values, dtype=float))
    cont = 1.0 - np.asarray(done, dtype=float)
    delta = r + gamma * nv - v
    adv = np.empty_like(delta)
    acc = 0.0
    for k in range(len(delta) - 1, -1, -1):
        acc = delta[k] + gamma * lam * cont[k] * acc
        adv[k] = acc
    return adv


def compute_value_targets(rewards, values, next_values, terminated, done, gamma=0.99, lam=0.95) -> np.ndarray:
    """Value targets ``G = V(s) + GAE(s)`` for every state of the trajectory."""
    return np.asarray(values, dtype=float) + gae(rewards, values, next_values, terminated, done, gamma, lam)


def compute_advantage(rewards, values, next_values, terminated, done, gamma=0.99, lam=0.95) -> float:
    """Segment advantage: lambda-weighted residual sum from the segment start."""
    adv = gae(rewards, values, next_values, terminated, done, gamma, lam)
    return float(adv[0])


def train_critic(
    net: ValueNet,
    opt: Adam,
    states,
    targets,
    epochs: int = 10,
    batch_size: int = 128,
    rng: Optional[np.random.Generator] = None,
    lr: Optional[float] = None,
) -> list:
    """Shuffled minibatch Adam on the squared value error.

    Returns the mean minibatch loss of each epoch.
    """
    states = np.asarray(states, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if len(states) == 0:
        raise ValueError("no value targets")
    if not np.all(np.isfinite(targets)):
        raise CriticDivergence("non-finite value targets")
    rng = np.random.default_rng(0) if rng is None else rng
    trace = []
    n = len(states)
    for epoch in range(epochs):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            loss, grad = net.loss_and_grad(states[idx], targets[idx])
            if not math.isfinite(loss):
                raise CriticDivergence(f"non-finite critic loss in epoch {epoch}")
            net.w -= opt.direction(grad, lr)
            losses.append(loss)
        trace.append(float(np.mean(losses)))
    return trace
