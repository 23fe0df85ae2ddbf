"""Small problems with known answers.

``QuadraticBandit`` is a one-step env whose optimum is known in closed form.
``TwoStateMdp`` has continuous actions and finitely many states, so the
value of the parameter-noise behavior policy can be computed exactly by
dynamic programming; :func:`mc_policy_gradient_check` uses it to compare the
Q-weighted noise estimator against a finite difference of the smoothed
objective.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import Controller, Env
from .params import ParamSpace, ParamSpec

__all__ = [
    "QuadraticBandit",
    "DirectController",
    "bandit_space",
    "TwoStateMdp",
    "GradientCheck",
    "mc_policy_gradient_check",
    "fd_step_sweep",
]


class QuadraticBandit(Env):
    """Single-step episodes with cost ``(a - target)^2``."""

    obs_dim = 1
    max_episode_length = 1

    def __init__(self, target: float = 0.3):
        super().__init__()
        self.target = float(target)

    def _reset(self, rng):
        return np.zeros(1)

    def _step(self, action):
        a = float(np.asarray(action).reshape(-1)[0])
        return np.zeros(1), (a - self.target) ** 2, False, {}


class DirectController(Controller):
    """Outputs its parameter vector as the action."""

    def __init__(self):
        self.theta = None

    def set_params(self, theta):
        self.theta = np.array(theta, dtype=float)

    def act(self, obs):
        return self.theta.copy()


def bandit_space() -> ParamSpace:
    return ParamSpace([ParamSpec("x", -1.0, 1.0)])


_GH_X, _GH_W = np.polynomial.hermite_e.hermegauss(80)
_GH_W = _GH_W / _GH_W.sum()


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


@dataclass
class TwoStateMdp:
    """Two states, scalar action ``a = theta * gain[s]``.

    Reward ``bonus[s] - (a - target[s])^2``; the next state is 1 with
    probability ``sigmoid(slope[s] * a + shift[s])``.
    """

    gain: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.5]))
    bonus: np.ndarray = field(default_factory=lambda: np.array([0.0, 1.0]))
    target: np.ndarray = field(default_factory=lambda: np.array([0.8, 0.2]))
    slope: np.ndarray = field(default_factory=lambda: np.array([2.0, -1.5]))
    shift: np.ndarray = field(default_factory=lambda: np.array([-0.5, 0.5]))
    d0: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0]))
    gamma: float = 0.9
    reward_scale: float = 1.0

    @classmethod
    def zero_reward(cls) -> "TwoStateMdp":
        return cls(reward_scale=0.0)

    def action(self, theta, s):
        return theta * self.gain[s]

    def reward(self, s, a):
        return self.reward_scale * (self.bonus[s] - (a - self.target[s]) ** 2)

    def p_next1(self, s, a):
        return _sigmoid(self.slope[s] * a + self.shift[s])

    def _averaged(self, theta, sigma):
        """Noise-averaged reward and transition matrix of the behavior policy."""
        r_bar = np.zeros(2)
        p_bar = np.zeros((2, 2))
        for s in range(2):
            a = self.action(theta + sigma * _GH_X, s)
            r_bar[s] = _GH_W @ self.reward(s, a)
            p1 = _GH_W @ self.p_next1(s, a)
            p_bar[s] = (1.0 - p1, p1)
        return r_bar, p_bar

    def values(self, theta, sigma) -> np.ndarray:
        r_bar, p_bar = self._averaged(theta, sigma)
        return np.linalg.solve(np.eye(2) - self.gamma * p_bar, r_bar)

    def objective(self, theta, sigma) -> float:
        """Exact smoothed objective ``E_{s~d0} V^beta(s)``."""
        return float(self.d0 @ self.values(theta, sigma))

    def q_values(self, theta, sigma, s, a, v=None):
        v = self.values(theta, sigma) if v is None else v
        p1 = self.p_next1(s, a)
        return self.reward(s, a) + self.gamma * ((1.0 - p1) * v[0] + p1 * v[1])

    def discounted_visits(self, theta, sigma) -> np.ndarray:
        """Unnormalized discounted state distribution ``sum_t gamma^t P(s_t)``."""
        _, p_bar = self._averaged(theta, sigma)
        return np.linalg.solve((np.eye(2) - self.gamma * p_bar).T, self.d0)

    def exact_noise_gradient(self, theta, sigma) -> float:
        """Q-weighted noise gradient evaluated with quadrature instead of sampling."""
        v = self.values(theta, sigma)
        d = self.discounted_visits(theta, sigma)
        total = 0.0
        for s in range(2):
            a = self.action(theta + sigma * _GH_X, s)
            total += d[s] * (_GH_W @ (self.q_values(theta, sigma, s, a, v) * _GH_X)) / sigma
        return float(total)


@dataclass
class GradientCheck:
    noise_estimate: float
    noise_halfwidth: float
    fd_estimate: float
    fd_halfwidth: float

    @property
    def noise_ci(self):
        return (self.noise_estimate - self.noise_halfwidth, self.noise_estimate + self.noise_halfwidth)

    @property
    def fd_ci(self):
        return (self.fd_estimate - self.fd_halfwidth, self.fd_estimate + self.fd_halfwidth)

    @property
    def overlap(self) -> bool:
        lo = max(self.noise_ci[0], self.fd_ci[0])
        hi = min(self.noise_ci[1], self.fd_ci[1])
        return lo <= hi


def mc_policy_gradient_check(
    mdp: TwoStateMdp,
    theta: float,
    sigma: float,
    samples: int = 100_000,
    fd_step: float = 0.05,
    seed: int = 0,
    z: float = 1.959963984540054,
) -> GradientCheck:
    """Two independent Monte-Carlo estimates of the smoothed-objective gradient.

    (a) states from the exact discounted visitation, fresh noise, exact
    ``Q^beta`` by DP: ``|d| * mean(Q(s, pi_{theta+sigma eps}(s)) eps) / sigma``.
    (b) central difference of sampled discounted returns of the behavior
    policy at ``theta +- fd_step`` with common random numbers.
    Half-widths are normal-approximation confidence intervals at level ``z``.
    """
    rng = np.random.default_rng(seed)
    d = mdp.discounted_visits(theta, sigma)
    mass = d.sum()
    v = mdp.values(theta, sigma)
    s = (rng.random(samples) < d[1] / mass).astype(int)
    eps = rng.standard_normal(samples)
    a = mdp.action(theta + sigma * eps, s)
    terms = mass * mdp.q_values(theta, sigma, s, a, v) * eps / sigma
    noise_est = float(terms.mean())
    noise_hw = float(z * terms.std(ddof=1) / np.sqrt(samples))

    horizon = int(np.ceil(np.log(1e-10) / np.log(mdp.gamma)))
    s0 = (rng.random(samples) < mdp.d0[1] / mdp.d0.sum()).astype(int)
    ret = {}
    state = {}
    for h in (+fd_step, -fd_step):
        ret[h] = np.zeros(samples)
        state[h] = s0.copy()
    disc = 1.0
    for _ in range(horizon):
        eps_t = rng.standard_normal(samples)
        u_t = rng.random(samples)
        for h in (+fd_step, -fd_step):
            st = state[h]
            act = mdp.action(theta + h + sigma * eps_t, st)
            ret[h] += disc * mdp.reward(st, act)
            state[h] = (u_t < mdp.p_next1(st, act)).astype(int)
        disc *= mdp.gamma
    diff = (ret[+fd_step] - ret[-fd_step]) / (2 * fd_step)
    return GradientCheck(
        noise_est, noise_hw, float(diff.mean()), float(z * diff.std(ddof=1) / np.sqrt(samples))
    )


def fd_step_sweep(mdp: TwoStateMdp, theta: float, sigma: float, steps) -> np.ndarray:
    """Central differences of the exact smoothed objective for several steps."""
    return np.array(
        [(mdp.objective(theta + h, sigma) - mdp.objective(theta - h, sigma)) / (2 * h) for h in steps]
    )
