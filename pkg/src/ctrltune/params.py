"""Box-constrained parameter spaces and their normalized [-1, 1]^d view.

The tuner only ever moves in the normalized cube; each dimension maps to
native units either linearly or logarithmically.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

__all__ = ["ConfigError", "ParamSpec", "ParamSpace", "clamp"]


class ConfigError(ValueError):
    """Invalid configuration or argument shape."""


LINEAR = "linear"
LOG = "log"
_SCALE_ALIASES = {"linear": LINEAR, "lin": LINEAR, "log": LOG, "logarithmic": LOG}

# slack allowed when checking native values against their bounds
_BOUND_RTOL = 1e-12


@dataclass(frozen=True)
class ParamSpec:
    name: str
    lower: float
    upper: float
    scale: str = LINEAR

    def __post_init__(self):
        scale = _SCALE_ALIASES.get(str(self.scale).lower())
        if scale is None:
            raise ConfigError(f"{self.name}: unknown scale {self.scale!r}")
        object.__setattr__(self, "scale", scale)
        object.__setattr__(self, "lower", float(self.lower))
        object.__setattr__(self, "upper", float(self.upper))
        if not (math.isfinite(self.lower) and math.isfinite(self.upper)):
            raise ConfigError(f"{self.name}: bounds must be finite")
        if not self.lower < self.upper:
            raise ConfigError(f"{self.name}: lower={self.lower} must be < upper={self.upper}")
        if scale == LOG and not (self.lower * self.upper > 0):
            raise ConfigError(f"{self.name}: log scale needs bounds of the same nonzero sign")

    @property
    def is_log(self) -> bool:
        return self.scale == LOG


def clamp(m) -> np.ndarray:
    """Project onto [-1, 1] componentwise."""
    return np.clip(np.asarray(m, dtype=float), -1.0, 1.0)


class ParamSpace:
    """Ordered list of :class:`ParamSpec` with vectorized mappings.

    ``to_native`` and ``to_mapped`` accept a single vector of length ``d`` or a
    stack of shape ``(..., d)``.
    """

    def __init__(self, specs: Iterable[ParamSpec]):
        specs = tuple(specs)
        if not specs:
            raise ConfigError("parameter space needs at least one dimension")
        names = [s.name for s in specs]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate parameter names in {names}")
        self.specs = specs
        self.names = tuple(names)
        self.lower = np.array([s.lower for s in specs])
        self.upper = np.array([s.upper for s in specs])
        self._log = np.array([s.is_log for s in specs])
        # log dims interpolate log|bound|; sign restores negative intervals
        sign = np.where(self.lower < 0, -1.0, 1.0)
        self._sign = np.where(self._log, sign, 1.0)
        with np.errstate(divide="ignore"):
            self._a = np.where(self._log, np.log(np.abs(self.lower)), self.lower)
            self._b = np.where(self._log, np.log(np.abs(self.upper)), self.upper)

    @property
    def dim(self) -> int:
        return len(self.specs)

    def __len__(self):
        return len(self.specs)

    def __repr__(self):
        return f"ParamSpace({list(self.specs)!r})"

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise ConfigError(f"unknown parameter {name!r}; known: {', '.join(self.names)}") from None

    def _check(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if v.ndim == 0 or v.shape[-1] != self.dim:
            raise ConfigError(f"expected vector(s) of length {self.dim}, got shape {v.shape}")
        return v

    def to_native(self, m) -> np.ndarray:
        m = self._check(m)
        t = (m + 1.0) / 2.0
        z = self._a + t * (self._b - self._a)
        theta = z.copy()
        if self._log.any():
            theta[..., self._log] = self._sign[self._log] * np.exp(z[..., self._log])
        # exp() can overshoot the bound by an ulp
        return np.clip(theta, self.lower, self.upper)

    def to_mapped(self, theta) -> np.ndarray:
        theta = self._check(theta)
        tol = _BOUND_RTOL * np.maximum(np.abs(self.lower), np.abs(self.upper))
        bad = (theta < self.lower - tol) | (theta > self.upper + tol) | ~np.isfinite(theta)
        if np.any(bad):
            idx = np.argwhere(bad)[0][-1]
            raise ConfigError(
                f"{self.names[idx]}={np.asarray(theta)[..., idx]} outside "
                f"[{self.lower[idx]}, {self.upper[idx]}]"
            )
        theta = np.clip(theta, self.lower, self.upper)
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.where(self._log, np.log(np.abs(theta)), theta)
        return 2.0 * (z - self._a) / (self._b - self._a) - 1.0

    clamp = staticmethod(clamp)

    def native_dict(self, theta) -> dict:
        theta = self._check(theta)
        return {name: float(v) for name, v in zip(self.names, theta)}

    def from_dict(self, values: dict) -> np.ndarray:
        """Native vector from a name -> value mapping (all names required)."""
        missing = [n for n in self.names if n not in values]
        if missing:
            raise ConfigError(f"missing parameter values for {missing}")
        return np.array([float(values[n]) for n in self.names])

    def to_config(self) -> list:
        return [
            {"name": s.name, "lower": s.lower, "upper": s.upper, "scale": s.scale}
            for s in self.specs
        ]

    @classmethod
    def from_config(cls, items: Sequence[dict]) -> "ParamSpace":
        try:
            return cls(ParamSpec(**dict(it)) for it in items)
        except TypeError as exc:
            raise ConfigError(f"bad parameter spec: {exc}") from None
