"""Single-shooting MPC over the bicycle model.

The input sequence is the only decision variable (inputs are box-bounded,
states are not constrained), so the problem is solved by projected gradient
descent: exact forward rollout, adjoint (reverse-mode) gradient, Barzilai-
Borwein trial steps and Armijo backtracking, which keeps the objective
monotonically non-increasing. Inputs are rescaled to [-1, 1] and the weights
are normalized by their sum internally, so multiplying every weight by the
same constant leaves the iterates unchanged.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numba
import numpy as np

from .bicycle import step_into, step_jacobians

__all__ = [
    "MpcProblem",
    "MpcSolution",
    "mpc_solve",
    "shooting_objective",
    "shooting_gradient",
    "rollout",
    "DELTA_MAX",
    "ACCEL_MAX",
]

DELTA_MAX = 2 * math.pi / 15
ACCEL_MAX = 3.0

CONVERGED, MAX_ITER, STALLED, FAILED = 0, 1, 2, 3


@dataclass
class MpcProblem:
    x0: np.ndarray
    xref: np.ndarray  # (N_p + 1, 6); row 0 does not affect the argmin
    qs: np.ndarray  # stage state weights (6,)
    qt: np.ndarray  # terminal state weights (6,)
    r: np.ndarray  # input weights (2,)
    params: np.ndarray  # (I_z, k_f, k_r, l_f, l_r, m)
    Ts: float = 0.1
    gamma: float = 0.99
    umin: np.ndarray = field(default_factory=lambda: np.array([-DELTA_MAX, -ACCEL_MAX]))
    umax: np.ndarray = field(default_factory=lambda: np.array([DELTA_MAX, ACCEL_MAX]))
    warm_start: Optional[np.ndarray] = None
    max_iter: int = 60
    tol: float = 1e-4

    @property
    def horizon(self) -> int:
        return len(self.xref) - 1


@dataclass
class MpcSolution:
    U: np.ndarray
    X: np.ndarray
    objective: float
    iterations: int
    status: int

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED

    @property
    def failed(self) -> bool:
        return self.status == FAILED


@numba.njit(cache=True, nogil=True)
def _rollout(U, x0, p, Ts, X):
    for i in range(6):
        X[0, i] = x0[i]
    for k in range(U.shape[0]):
        if not step_into(X[k], U[k, 0], U[k, 1], p, Ts, X[k + 1]):
            return False
    return True


@numba.njit(cache=True, nogil=True)
def _cost(U, X, xref, qs, qt, r, gamma):
    Np = U.shape[0]
    J = 0.0
    disc = 1.0
    for k in range(Np):
        stage = 0.0
        for i in range(6):
            e = X[k, i] - xref[k, i]
            stage += qs[i] * e * e
        stage += r[0] * U[k, 0] * U[k, 0] + r[1] * U[k, 1] * U[k, 1]
        J += disc * stage
        disc *= gamma
    term = 0.0
    for i in range(6):
        e = X[Np, i] - xref[Np, i]
        term += qt[i] * e * e
    return J + disc * term


@numba.njit(cache=True, nogil=True)
def _gradient(U, X, xref, qs, qt, r, p, Ts, gamma, G):
    Np = U.shape[0]
    A = np.empty((6, 6))
    B = np.empty((6, 2))
    lam = np.empty(6)
    nxt = np.empty(6)
    disc = gamma**Np
    for i in range(6):
        lam[i] = 2.0 * disc * qt[i] * (X[Np, i] - xref[Np, i])
    for k in range(Np - 1, -1, -1):
        disc /= gamma
        step_jacobians(X[k], U[k, 0], U[k, 1], p, Ts, A, B)
        for j in range(2):
            acc = 2.0 * disc * r[j] * U[k, j]
            for i in range(6):
                acc += B[i, j] * lam[i]
            G[k, j] = acc
        for j in range(6):
            acc = 2.0 * disc * qs[j] * (X[k, j] - xref[k, j])
            for i in range(6):
                acc += A[i, j] * lam[i]
            nxt[j] = acc
        for j in range(6):
            lam[j] = nxt[j]


@numba.njit(cache=True, nogil=True)
def _solve(x0, xref, qs_in, qt_in, r_in, p, Ts, gamma, umin, umax, U0, max_iter, tol):
    Np = U0.shape[0]
    wsum = qs_in.sum() + qt_in.sum() + r_in.sum()
    qs = qs_in / wsum
    qt = qt_in / wsum
    r = r_in / wsum
    half = (umax - umin) / 2.0
    mid = (umax + umin) / 2.0

    z = np.empty((Np, 2))
    for k in range(Np):
        for j in range(2):
            z[k, j] = min(max((U0[k, j] - mid[j]) / half[j], -1.0), 1.0)
    U = np.empty((Np, 2))
    for k in range(Np):
        for j in range(2):
            U[k, j] = mid[j] + half[j] * z[k, j]
    X = np.empty((Np + 1, 6))
    if not _rollout(U, x0, p, Ts, X):
        return U, X, np.inf, 0, 3
    J = _cost(U, X, xref, qs, qt, r, gamma)
    if not np.isfinite(J):
        return U, X, J * wsum, 0, 3
    G = np.empty((Np, 2))
    _gradient(U, X, xref, qs, qt, r, p, Ts, gamma, G)
    gz = G * half

    gmax = np.abs(gz).max()
    alpha = 0.1 / gmax if gmax > 0 else 1.0
    z_new = np.empty((Np, 2))
    U_new = np.empty((Np, 2))
    X_new = np.empty((Np + 1, 6))
    G_new = np.empty((Np, 2))
    status = 1
    it = 0
    while it < max_iter:
        pg = 0.0
        for k in range(Np):
            for j in range(2):
                d = min(max(z[k, j] - gz[k, j], -1.0), 1.0) - z[k, j]
                pg = max(pg, abs(d))
        if pg < tol:
            status = 0
            break
        accepted = False
        J_new = J
        for _ in range(50):
            dec = 0.0
            for k in range(Np):
                for j in range(2):
                    zn = min(max(z[k, j] - alpha * gz[k, j], -1.0), 1.0)
                    z_new[k, j] = zn
                    dec += gz[k, j] * (zn - z[k, j])
                    U_new[k, j] = mid[j] + half[j] * zn
            if _rollout(U_new, x0, p, Ts, X_new):
                J_new = _cost(U_new, X_new, xref, qs, qt, r, gamma)
                if np.isfinite(J_new) and J_new <= J + 1e-4 * dec:
                    accepted = True
                    break
            alpha *= 0.5
        if not accepted:
            status = 2
            break
        _gradient(U_new, X_new, xref, qs, qt, r, p, Ts, gamma, G_new)
        ss = 0.0
        sy = 0.0
        for k in range(Np):
            for j in range(2):
                s_ = z_new[k, j] - z[k, j]
                y_ = G_new[k, j] * half[j] - gz[k, j]
                ss += s_ * s_
                sy += s_ * y_
        alpha = ss / sy if sy > 1e-300 else 2.0 * alpha
        alpha = min(max(alpha, 1e-12), 1e12)
        z[:, :] = z_new
        U[:, :] = U_new
        X[:, :] = X_new
        for k in range(Np):
            for j in range(2):
                gz[k, j] = G_new[k, j] * half[j]
        J = J_new
        it += 1
    return U, X, J * wsum, it, status


def _arrays(prob: MpcProblem):
    f = lambda a: np.ascontiguousarray(a, dtype=np.float64)
    return (f(prob.x0), f(prob.xref), f(prob.qs), f(prob.qt), f(prob.r), f(prob.params))


def mpc_solve(prob: MpcProblem) -> MpcSolution:
    x0, xref, qs, qt, r, p = _arrays(prob)
    Np = prob.horizon
    if xref.shape != (Np + 1, 6) or x0.shape != (6,):
        raise ValueError("x0 must be (6,) and xref (N_p + 1, 6)")
    U0 = np.zeros((Np, 2)) if prob.warm_start is None else np.ascontiguousarray(prob.warm_start, dtype=np.float64)
    if U0.shape != (Np, 2):
        raise ValueError(f"warm start must have shape {(Np, 2)}")
    U, X, J, it, status = _solve(
        x0, xref, qs, qt, r, p, float(prob.Ts), float(prob.gamma),
        np.asarray(prob.umin, dtype=np.float64), np.asarray(prob.umax, dtype=np.float64),
        U0, int(prob.max_iter), float(prob.tol),
    )
    return MpcSolution(U, X, float(J), int(it), int(status))


def rollout(prob: MpcProblem, U) -> np.ndarray:
    x0, _, _, _, _, p = _arrays(prob)
    U = np.ascontiguousarray(U, dtype=np.float64)
    X = np.empty((len(U) + 1, 6))
    if not _rollout(U, x0, p, float(prob.Ts), X):
        raise ArithmeticError("model singularity during rollout")
    return X


def shooting_objective(prob: MpcProblem, U) -> float:
    """Discounted horizon cost of input sequence ``U`` (original weights)."""
    _, xref, qs, qt, r, _ = _arrays(prob)
    U = np.ascontiguousarray(U, dtype=np.float64)
    return float(_cost(U, rollout(prob, U), xref, qs, qt, r, float(prob.gamma)))


def shooting_gradient(prob: MpcProblem, U) -> np.ndarray:
    """Adjoint gradient of :func:`shooting_objective` w.r.t. ``U``."""
    _, xref, qs, qt, r, p = _arrays(prob)
    U = np.ascontiguousarray(U, dtype=np.float64)
    G = np.empty_like(U)
    _gradient(U, rollout(prob, U), xref, qs, qt, r, p, float(prob.Ts), float(prob.gamma), G)
    return G
