"""Trajectory tracking with a receding-horizon MPC whose model and weights are tuned.

The plant is the bicycle model with the true parameters. The controller's
internal model uses candidate parameters, so the one-step prediction error
``||F_candidate(X_t, U_t) - X_{t+1}||^2`` measures model accuracy.

Reference rows are ``(x_r, y_r, phi_r, u_r, 0, 0)``: lateral velocity and yaw
rate references are zero so that the tracking cost maps one-to-one onto the
MPC's diagonal weights. The cost of step ``t`` is evaluated on the landed
state ``X_{t+1}`` against ``X_r(t+1)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from ..core import Controller, Env
from ..params import ParamSpace, ParamSpec
from .bicycle import TRUE_PARAMS, step_into
from .mpc import ACCEL_MAX, DELTA_MAX, MpcProblem, mpc_solve

__all__ = [
    "PROFILES",
    "TrackingScenario",
    "generate_reference",
    "tracking_cost",
    "regularized_cost",
    "prediction_error",
    "tracking_space",
    "nominal_theta",
    "unpack_theta",
    "MpcController",
    "TrackingEnv",
    "W_S_U",
]

PROFILES = ("straight", "sine", "double-lane-change")
STATE_NAMES = ("x", "y", "phi", "u", "v", "omega")
MODEL_NAMES = ("I_z", "k_f", "k_r", "l_f", "l_r", "m")
MODEL_BOUNDS = {
    "I_z": (1e3, 2e3),
    "k_f": (-16e4, -8e4),
    "k_r": (-16e4, -8e4),
    "l_f": (0.8, 2.2),
    "l_r": (0.8, 2.2),
    "m": (1e3, 2e3),
}
W_S_U = 1e-2  # fixed stage weight on longitudinal speed; removes the scale redundancy
WEIGHT_BOUNDS = (1e-6, 1e2)


def tracking_space() -> ParamSpace:
    """6 linear model parameters + 13 log-scaled weights."""
    specs = [ParamSpec(n, *MODEL_BOUNDS[n]) for n in MODEL_NAMES]
    specs += [ParamSpec(f"qs_{s}", *WEIGHT_BOUNDS, "log") for s in STATE_NAMES if s != "u"]
    specs += [ParamSpec(f"qt_{s}", *WEIGHT_BOUNDS, "log") for s in STATE_NAMES]
    specs += [ParamSpec(f"r_{s}", *WEIGHT_BOUNDS, "log") for s in ("delta", "a")]
    return ParamSpace(specs)


def unpack_theta(theta) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Native 19-vector -> (model params, stage weights, terminal weights, input weights)."""
    theta = np.asarray(theta, dtype=float)
    model = theta[:6]
    qs = np.array([theta[6], theta[7], theta[8], W_S_U, theta[9], theta[10]])
    qt = theta[11:17].copy()
    r = theta[17:19].copy()
    return model, qs, qt, r


def nominal_theta() -> np.ndarray:
    """True model with the tracking cost itself as weights (scaled so w_s^u = 1e-2).

    States the cost ignores get the lowest admissible weight.
    """
    lo = WEIGHT_BOUNDS[0]
    s = W_S_U
    state_w = [lo, 4 * s, 10 * s, 1 * s, lo, 2 * s]
    qs = [w for n, w in zip(STATE_NAMES, state_w) if n != "u"]
    return np.array([*TRUE_PARAMS.array(), *qs, *state_w, 500 * s, 5 * s])


def tracking_cost(state, ref, delta, a) -> float:
    x, y, phi, u, v, w = state
    return float(
        (u - ref[3]) ** 2 + 4 * (y - ref[1]) ** 2 + 10 * (phi - ref[2]) ** 2
        + 2 * w**2 + 500 * delta**2 + 5 * a**2
    )


def regularized_cost(r: float, predicted, actual, zeta: float = 50.0) -> float:
    d = np.asarray(predicted, dtype=float) - np.asarray(actual, dtype=float)
    return float(r + 0.5 * zeta * (d @ d))


def prediction_error(predicted, actual) -> float:
    """Mean squared one-step prediction error over an episode (rows are steps)."""
    d = np.atleast_2d(np.asarray(predicted, dtype=float) - np.asarray(actual, dtype=float))
    return float(np.mean(np.sum(d * d, axis=1)))


@dataclass
class TrackingScenario:
    profiles: Sequence[str] = PROFILES
    speed: Tuple[float, float] = (8.0, 12.0)
    sine_amplitude: Tuple[float, float] = (1.0, 3.0)
    sine_wavelength: Tuple[float, float] = (60.0, 120.0)
    lane_shift: Tuple[float, float] = (2.5, 3.5)
    episode_length: int = 200
    horizon: int = 25
    Ts: float = 0.1
    init_y: float = 0.5
    init_phi: float = 0.05
    penalty: float = 1000.0
    y_limit: float = 4.0
    phi_limit: float = math.pi / 4
    u_limit: float = 4.0
    min_speed: float = 0.5
    reg_coef: float = 0.0

    def __post_init__(self):
        for p in self.profiles:
            if p not in PROFILES:
                raise ValueError(f"unknown reference profile {p!r}; choose from {PROFILES}")


def _path(profile: str, rng: np.random.Generator, sc: TrackingScenario):
    """(y(x), dy/dx(x)) for the chosen profile with randomized shape."""
    if profile == "straight":
        return (lambda x: np.zeros_like(x)), (lambda x: np.zeros_like(x))
    if profile == "sine":
        A = rng.uniform(*sc.sine_amplitude)
        k = 2 * math.pi / rng.uniform(*sc.sine_wavelength)
        return (lambda x: A * np.sin(k * x)), (lambda x: A * k * np.cos(k * x))
    if profile == "double-lane-change":
        h = rng.uniform(*sc.lane_shift)
        x1 = rng.uniform(40.0, 60.0)
        x2 = x1 + rng.uniform(40.0, 60.0)
        s = 0.1  # transition sharpness, 1/m

        def y(x):
            return 0.5 * h * (np.tanh(s * (x - x1)) - np.tanh(s * (x - x2)))

        def dy(x):
            return 0.5 * h * s * (1 / np.cosh(s * (x - x1)) ** 2 - 1 / np.cosh(s * (x - x2)) ** 2)

        return y, dy
    raise ValueError(f"unknown reference profile {profile!r}; choose from {PROFILES}")


def generate_reference(profile: str, seed, sc: TrackingScenario = None, length: int = None) -> np.ndarray:
    """Time-indexed reference ``(length, 6)`` moving along the path at constant speed.

    ``length`` defaults to ``episode_length + horizon + 1``.
    """
    sc = TrackingScenario() if sc is None else sc
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    n = sc.episode_length + sc.horizon + 1 if length is None else length
    speed = rng.uniform(*sc.speed)
    y_fn, dy_fn = _path(profile, rng, sc)
    s_end = speed * sc.Ts * n + 10.0
    xs = np.linspace(0.0, s_end * 1.05, int(s_end * 20) + 2)
    seg = np.hypot(np.diff(xs), np.diff(y_fn(xs)))
    arclen = np.concatenate([[0.0], np.cumsum(seg)])
    s_t = speed * sc.Ts * np.arange(n)
    x_r = np.interp(s_t, arclen, xs)
    ref = np.zeros((n, 6))
    ref[:, 0] = x_r
    ref[:, 1] = y_fn(x_r)
    ref[:, 2] = np.arctan(dy_fn(x_r))
    ref[:, 3] = speed
    return ref


class MpcController(Controller):
    """Receding-horizon controller; ``theta`` is the native 19-vector."""

    def __init__(self, horizon: int = 25, Ts: float = 0.1, gamma: float = 0.99, max_iter: int = 60, tol: float = 1e-4):
        self.horizon = horizon
        self.Ts = Ts
        self.gamma = gamma
        self.max_iter = max_iter
        self.tol = tol
        self.warm = None
        self.last_solution = None
        self.failures = 0

    def set_params(self, theta):
        self.model, self.qs, self.qt, self.r = unpack_theta(theta)

    def reset(self):
        self.warm = None
        self.last_solution = None

    def problem(self, obs) -> MpcProblem:
        obs = np.asarray(obs, dtype=float)
        x0 = obs[:6]
        xref = np.empty((self.horizon + 1, 6))
        xref[0] = x0
        xref[1:] = obs[6:].reshape(self.horizon, 6)
        return MpcProblem(
            x0, xref, self.qs, self.qt, self.r, self.model, self.Ts, self.gamma,
            warm_start=self.warm, max_iter=self.max_iter, tol=self.tol,
        )

    def act(self, obs):
        sol = mpc_solve(self.problem(obs))
        self.last_solution = sol
        if sol.failed:
            # fall back to holding zero inputs and cold-starting the next solve
            self.failures += 1
            self.warm = None
            return np.zeros(2)
        self.warm = np.vstack([sol.U[1:], sol.U[-1:]])
        return sol.U[0].copy()


class TrackingEnv(Env):
    def __init__(self, scenario: TrackingScenario = None):
        super().__init__()
        self.sc = TrackingScenario() if scenario is None else scenario
        self.max_episode_length = self.sc.episode_length
        self.obs_dim = 6 + 6 * self.sc.horizon
        self.true_params = TRUE_PARAMS.array()
        self.candidate = None
        self._pred = np.empty(6)
        self._next = np.empty(6)

    def bind_params(self, theta):
        self.candidate = np.asarray(theta, dtype=float)[:6].copy()

    def _reset(self, rng):
        profile = self.sc.profiles[int(rng.integers(len(self.sc.profiles)))]
        self.profile = profile
        self.ref = generate_reference(profile, rng, self.sc)
        X = self.ref[0].copy()
        X[1] += rng.uniform(-self.sc.init_y, self.sc.init_y)
        X[2] += rng.uniform(-self.sc.init_phi, self.sc.init_phi)
        self.X = X
        return self._obs_at(X, 0)

    def _step(self, action):
        sc = self.sc
        delta = min(max(float(action[0]), -DELTA_MAX), DELTA_MAX)
        a = min(max(float(action[1]), -ACCEL_MAX), ACCEL_MAX)
        X = self.X
        ok = step_into(X, delta, a, self.true_params, sc.Ts, self._next)
        X_next = self._next.copy()
        ref = self.ref[self.t + 1]
        info = {"delta": delta, "a": a}
        if not ok or not np.all(np.isfinite(X_next)):
            info["singular"] = True
            # keep the last finite state so the observation stays finite
            return self._obs_at(X, self.t + 1), sc.penalty, True, info
        cost = tracking_cost(X_next, ref, delta, a)
        info["stage_cost"] = cost
        if self.candidate is not None:
            if step_into(X, delta, a, self.candidate, sc.Ts, self._pred):
                d = self._pred - X_next
                pe = float(d @ d)
            else:
                pe = float("inf")
            info["prediction_error"] = pe
            if sc.reg_coef:
                cost += 0.5 * sc.reg_coef * pe
        err_y = abs(X_next[1] - ref[1])
        err_phi = abs(X_next[2] - ref[2])
        err_u = abs(X_next[3] - ref[3])
        terminated = err_y > sc.y_limit or err_phi > sc.phi_limit or err_u > sc.u_limit or X_next[3] < sc.min_speed
        if terminated:
            cost += sc.penalty
        self.X = X_next
        return self._obs_at(X_next, self.t + 1), cost, terminated, info

    def _obs_at(self, X, t):
        H = self.sc.horizon
        return np.concatenate([X, self.ref[t + 1:t + 1 + H].ravel()])

    def describe_step(self, action, result):
        X = result.next_obs[:6]
        ref = self.ref[self.t]
        row = {n: X[i] for i, n in enumerate(STATE_NAMES)}
        row.update({f"{n}_ref": ref[i] for i, n in enumerate(STATE_NAMES[:4])})
        row.update({
            "delta": result.info.get("delta"),
            "a": result.info.get("a"),
            "stage_cost": result.info.get("stage_cost"),
            "prediction_error": result.info.get("prediction_error"),
        })
        return row
