"""Discrete-time dynamic bicycle model with a semi-implicit lateral update.

State ``(x, y, phi, u, v, omega)``, input ``(delta, a)``. Model parameters are
packed as ``(I_z, k_f, k_r, l_f, l_r, m)``; cornering stiffnesses are negative.
"""
from __future__ import annotations

import math
from dataclasses import astuple, dataclass

import numba
import numpy as np

__all__ = [
    "BicycleParams",
    "TRUE_PARAMS",
    "ModelSingularity",
    "bicycle_step",
    "step_into",
    "step_jacobians",
    "DENOM_GUARD",
]

# |denominator| below this is treated as a model singularity
DENOM_GUARD = 1e-6


class ModelSingularity(ArithmeticError):
    pass


@dataclass(frozen=True)
class BicycleParams:
    I_z: float = 1536.7
    k_f: float = -128916.0
    k_r: float = -85944.0
    l_f: float = 1.06
    l_r: float = 1.85
    m: float = 1412.0

    def array(self) -> np.ndarray:
        return np.array(astuple(self))


TRUE_PARAMS = BicycleParams()


@numba.njit(cache=True, nogil=True)
def step_into(s, delta, a, p, Ts, out):
    """Write the successor of ``s`` into ``out``; return False on a singular denominator."""
    x, y, phi, u, v, w = s[0], s[1], s[2], s[3], s[4], s[5]
    I_z, k_f, k_r, l_f, l_r, m = p[0], p[1], p[2], p[3], p[4], p[5]
    c = math.cos(phi)
    sn = math.sin(phi)
    L = l_f * k_f - l_r * k_r
    den_v = m * u - Ts * (k_f + k_r)
    den_w = I_z * u - Ts * (l_f * l_f * k_f + l_r * l_r * k_r)
    if abs(den_v) < DENOM_GUARD or abs(den_w) < DENOM_GUARD:
        return False
    out[0] = x + Ts * (u * c - v * sn)
    out[1] = y + Ts * (v * c + u * sn)
    out[2] = phi + Ts * w
    out[3] = u + Ts * a
    out[4] = (m * u * v + Ts * L * w - Ts * k_f * delta * u - Ts * m * u * u * w) / den_v
    out[5] = (I_z * u * w + Ts * L * v - Ts * l_f * k_f * delta * u) / den_w
    return True


@numba.njit(cache=True, nogil=True)
def step_jacobians(s, delta, a, p, Ts, A, B):
    """Fill ``A = dF/ds`` (6x6) and ``B = dF/d(delta, a)`` (6x2)."""
    phi, u, v, w = s[2], s[3], s[4], s[5]
    I_z, k_f, k_r, l_f, l_r, m = p[0], p[1], p[2], p[3], p[4], p[5]
    c = math.cos(phi)
    sn = math.sin(phi)
    L = l_f * k_f - l_r * k_r
    den_v = m * u - Ts * (k_f + k_r)
    den_w = I_z * u - Ts * (l_f * l_f * k_f + l_r * l_r * k_r)
    num_v = m * u * v + Ts * L * w - Ts * k_f * delta * u - Ts * m * u * u * w
    num_w = I_z * u * w + Ts * L * v - Ts * l_f * k_f * delta * u
    for i in range(6):
        for j in range(6):
            A[i, j] = 0.0
        B[i, 0] = 0.0
        B[i, 1] = 0.0
    A[0, 0] = 1.0
    A[0, 2] = Ts * (-u * sn - v * c)
    A[0, 3] = Ts * c
    A[0, 4] = -Ts * sn
    A[1, 1] = 1.0
    A[1, 2] = Ts * (u * c - v * sn)
    A[1, 3] = Ts * sn
    A[1, 4] = Ts * c
    A[2, 2] = 1.0
    A[2, 5] = Ts
    A[3, 3] = 1.0
    B[3, 1] = Ts
    dnum_v_du = m * v - Ts * k_f * delta - 2.0 * Ts * m * u * w
    A[4, 3] = (dnum_v_du * den_v - num_v * m) / (den_v * den_v)
    A[4, 4] = m * u / den_v
    A[4, 5] = (Ts * L - Ts * m * u * u) / den_v
    B[4, 0] = -Ts * k_f * u / den_v
    dnum_w_du = I_z * w - Ts * l_f * k_f * delta
    A[5, 3] = (dnum_w_du * den_w - num_w * I_z) / (den_w * den_w)
    A[5, 4] = Ts * L / den_w
    A[5, 5] = I_z * u / den_w
    B[5, 0] = -Ts * l_f * k_f * u / den_w


def bicycle_step(s, delta: float, a: float, p=TRUE_PARAMS, Ts: float = 0.1) -> np.ndarray:
    """Successor state; raises :class:`ModelSingularity` on a vanishing denominator."""
    p_arr = p.array() if isinstance(p, BicycleParams) else np.asarray(p, dtype=float)
    out = np.empty(6)
    if not step_into(np.asarray(s, dtype=float), float(delta), float(a), p_arr, float(Ts), out):
        raise ModelSingularity(f"bicycle model denominator vanished at u={s[3]}")
    return out
