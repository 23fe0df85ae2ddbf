"""Adaptive cruise control: first-order-lag car following under an incremental PID.

State ``x = (dd, dv, a_f)``: clearance error, speed error (preceding minus
ego) and ego acceleration. The continuous LTI model is discretized once by
exact zero-order hold. Observations stack ``(x_t, x_{t-1}, x_{t-2}, u_{t-1})``
so the incremental PID is a pure function of the observation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from ..core import Controller, Env
from ..params import ParamSpace, ParamSpec

__all__ = [
    "AccPlantParams",
    "AccEnv",
    "PidController",
    "acc_space",
    "continuous_matrices",
    "zoh_matrices",
    "acc_step",
    "acc_cost",
    "pid_increment",
    "pid_act",
    "episode_draws",
    "evaluate_pid_batch",
]


@dataclass(frozen=True)
class AccPlantParams:
    K_L: float = 1.0
    T_L: float = 0.45
    tau_h: float = 2.5
    d0: float = 5.0
    dt: float = 0.1
    u_min: float = -1.5
    u_max: float = 0.6
    max_length: int = 1000
    penalty: float = 1000.0
    dd_limit: float = 5.0
    dv_limit: float = 1.0
    # preceding-vehicle acceleration: N(0, var) held for hold_steps
    dist_var: float = 0.05
    hold_steps: int = 30
    init_dd: float = 1.0
    init_dv: float = 0.3

    def __post_init__(self):
        if not (self.T_L > 0 and self.dt > 0):
            raise ValueError("T_L and dt must be positive")


def acc_space() -> ParamSpace:
    return ParamSpace([ParamSpec(n, 0.0, 10.0) for n in ("k", "K_p", "K_i", "K_d")])


def continuous_matrices(p: AccPlantParams):
    A = np.array([[0.0, 1.0, -p.tau_h], [0.0, 0.0, -1.0], [0.0, 0.0, -1.0 / p.T_L]])
    B = np.array([0.0, 0.0, p.K_L / p.T_L])
    D = np.array([0.0, 1.0, 0.0])
    return A, B, D


def zoh_matrices(p: AccPlantParams):
    """Exact discretization of ``[A | B D]`` held over one step."""
    A, B, D = continuous_matrices(p)
    M = np.zeros((5, 5))
    M[:3, :3] = A
    M[:3, 3] = B
    M[:3, 4] = D
    E = expm(M * p.dt)
    return E[:3, :3].copy(), E[:3, 3].copy(), E[:3, 4].copy()


def acc_step(x, u, w, Ad, Bd, Dd):
    """One ZOH step; works on scalars or same-shaped arrays per component."""
    x0, x1, x2 = x
    return (
        Ad[0, 0] * x0 + Ad[0, 1] * x1 + Ad[0, 2] * x2 + Bd[0] * u + Dd[0] * w,
        Ad[1, 0] * x0 + Ad[1, 1] * x1 + Ad[1, 2] * x2 + Bd[1] * u + Dd[1] * w,
        Ad[2, 0] * x0 + Ad[2, 1] * x1 + Ad[2, 2] * x2 + Bd[2] * u + Dd[2] * w,
    )


def acc_cost(dd, dv, a_f, a_des, jerk):
    return (
        0.1 * dv * dv
        + 0.06 * dd * dd
        + a_des * a_des
        + 0.1 * jerk * jerk
        + 0.5 * (0.25 * dv + 0.02 * dd - a_f) ** 2
    )


def pid_increment(e0, e1, e2, K_p, K_i, K_d):
    """Velocity-form PID: ``Kp (e_t - e_{t-1}) + Ki e_t + Kd (e_t - 2 e_{t-1} + e_{t-2})``."""
    return K_p * (e0 - e1) + K_i * e0 + K_d * (e0 - 2.0 * e1 + e2)


def pid_act(obs, k, K_p, K_i, K_d, u_min=-1.5, u_max=0.6):
    e0 = k * obs[0] + obs[1]
    e1 = k * obs[3] + obs[4]
    e2 = k * obs[6] + obs[7]
    u = obs[9] + pid_increment(e0, e1, e2, K_p, K_i, K_d)
    return min(max(u, u_min), u_max)


def episode_draws(p: AccPlantParams, seed):
    """Initial state and the held disturbance values of one episode."""
    rng = np.random.default_rng(seed)
    dd = rng.uniform(-p.init_dd, p.init_dd)
    dv = rng.uniform(-p.init_dv, p.init_dv)
    n_holds = -(-p.max_length // p.hold_steps)
    w = rng.normal(0.0, math.sqrt(p.dist_var), n_holds)
    return (float(dd), float(dv), 0.0), w


class AccEnv(Env):
    obs_dim = 10

    def __init__(self, params: AccPlantParams = AccPlantParams()):
        super().__init__()
        self.p = params
        self.max_episode_length = params.max_length
        self.Ad, self.Bd, self.Dd = zoh_matrices(params)

    def reset(self, seed=None):
        self.t = 0
        x, self._w = episode_draws(self.p, seed)
        self.x = x
        self.hist = (x, x)
        self.u_prev = 0.0
        return self._obs()

    def _obs(self):
        x, (x1, x2) = self.x, self.hist
        return np.array([*x, *x1, *x2, self.u_prev])

    def disturbance(self, t: int) -> float:
        return float(self._w[t // self.p.hold_steps])

    def _step(self, action):
        p = self.p
        u = min(max(float(np.asarray(action).reshape(-1)[0]), p.u_min), p.u_max)
        w = self.disturbance(self.t)
        x_next = acc_step(self.x, u, w, self.Ad, self.Bd, self.Dd)
        jerk = (u - self.u_prev) / p.dt
        cost = acc_cost(x_next[0], x_next[1], x_next[2], u, jerk)
        terminated = abs(x_next[0]) > p.dd_limit or abs(x_next[1]) > p.dv_limit
        if terminated:
            cost += p.penalty
        self.hist = (self.x, self.hist[0])
        self.x = x_next
        self.u_prev = u
        return self._obs(), cost, terminated, {"u": u, "w": w}

    def describe_step(self, action, result):
        obs = result.next_obs
        return {"dd": obs[0], "dv": obs[1], "a_f": obs[2], "u": result.info["u"], "w": result.info["w"]}


class PidController(Controller):
    def __init__(self, u_min: float = -1.5, u_max: float = 0.6):
        self.u_min, self.u_max = u_min, u_max
        self.gains = (0.0, 0.0, 0.0, 0.0)

    def set_params(self, theta):
        self.gains = tuple(float(v) for v in theta)

    def act(self, obs):
        return pid_act(obs, *self.gains, self.u_min, self.u_max)


def evaluate_pid_batch(thetas, p: AccPlantParams, seeds):
    """Cumulative costs of many PID gain vectors on the same episodes.

    Arithmetic mirrors :class:`AccEnv` + :class:`PidController` operation by
    operation, so results agree with the scalar path bit for bit.
    Returns ``(costs, lengths, terminated)`` arrays of shape ``(P, E)``.
    """
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    k, K_p, K_i, K_d = thetas.T
    Ad, Bd, Dd = zoh_matrices(p)
    P, E = len(thetas), len(seeds)
    costs = np.zeros((P, E))
    lengths = np.zeros((P, E), dtype=int)
    terms = np.zeros((P, E), dtype=bool)
    for j, seed in enumerate(seeds):
        x0, w_seq = episode_draws(p, seed)
        x = tuple(np.full(P, v) for v in x0)
        h1 = x
        h2 = x
        u_prev = np.zeros(P)
        alive = np.ones(P, dtype=bool)
        total = np.zeros(P)
        length = np.zeros(P, dtype=int)
        for t in range(p.max_length):
            e0 = k * x[0] + x[1]
            e1 = k * h1[0] + h1[1]
            e2 = k * h2[0] + h2[1]
            u = np.minimum(np.maximum(u_prev + pid_increment(e0, e1, e2, K_p, K_i, K_d), p.u_min), p.u_max)
            w = float(w_seq[t // p.hold_steps])
            xn = acc_step(x, u, w, Ad, Bd, Dd)
            jerk = (u - u_prev) / p.dt
            c = acc_cost(xn[0], xn[1], xn[2], u, jerk)
            term = (np.abs(xn[0]) > p.dd_limit) | (np.abs(xn[1]) > p.dv_limit)
            c = np.where(term, c + p.penalty, c)
            total = np.where(alive, total + c, total)
            length += alive
            terms[:, j] |= alive & term
            alive &= ~term
            if not alive.any():
                break
            h2, h1, x = h1, x, xn
            u_prev = u
        costs[:, j] = total
        lengths[:, j] = length
    return costs, lengths, terms
