"""Exact transition law of the kinetic Fokker-Planck SDE on T x R.

    dX = V dt,  dV = -lambda V dt + dW

has the explicit solution

    X_t = X_0 + (1 - e^{-lambda t}) V_0 / lambda + A_t
    V_t = e^{-lambda t} V_0 + B_t

where ``(A_t, B_t)`` is a centred Gaussian pair driven by the same Brownian
motion. Everything here is closed form; no time stepping.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import DegenerateConditioningError, ParameterError
from .torus import wrap

_SERIES_CUTOFF = 0.5
_SERIES_TERMS = 30
_PIVOT_FLOOR = 1e-14


@dataclass(frozen=True)
class ModelParams:
    """Friction ``lam`` (lambda) and torus scale ``L``."""

    lam: float = 1.0
    L: float = 1.0

    def __post_init__(self):
        if not (self.lam > 0 and math.isfinite(self.lam)):
            raise ParameterError(f"lambda must be positive, got {self.lam!r}")
        if not (self.L > 0 and math.isfinite(self.L)):
            raise ParameterError(f"L must be positive, got {self.L!r}")

    @property
    def period(self) -> float:
        return 2.0 * math.pi * self.L


class PhasePoint(NamedTuple):
    x: float
    v: float


@dataclass(frozen=True)
class TransitionCovariance:
    t: float
    s_aa: float
    s_ab: float
    s_bb: float

    @property
    def det(self):
        return self.s_aa * self.s_bb - self.s_ab * self.s_ab

    def matrix(self) -> np.ndarray:
        """Covariance of ``(A, B)`` as a 2x2 array (scalar ``t`` only)."""
        return np.array([[self.s_aa, self.s_ab], [self.s_ab, self.s_bb]], dtype=float)


@dataclass(frozen=True)
class ConditionalGaussian:
    mean: float
    var: float


def _f_aa(u):
    """u - 2(1 - e^{-u}) + (1 - e^{-2u})/2, accurate near u = 0."""
    u = np.asarray(u, dtype=float)
    closed = u + 2.0 * np.expm1(-u) - 0.5 * np.expm1(-2.0 * u)
    # sum_{n>=3} (-1)^{n+1} (2^{n-1} - 2) u^n / n!
    series = np.zeros_like(u)
    term = np.ones_like(u)
    for n in range(1, _SERIES_TERMS + 1):
        term = term * u / n
        if n >= 3:
            series = series + (-1) ** (n + 1) * (2.0 ** (n - 1) - 2.0) * term
    return np.where(u < _SERIES_CUTOFF, series, closed)


def covariance(t, p: ModelParams) -> TransitionCovariance:
    """Covariance of the noise pair ``(A_t, B_t)``; ``t`` may be an array."""
    t_arr = np.asarray(t, dtype=float)
    if np.any(~(t_arr >= 0)):
        raise ParameterError("t must be nonnegative")
    lam = p.lam
    u = lam * t_arr
    em1 = -np.expm1(-u)  # 1 - e^{-u}
    s_bb = -np.expm1(-2.0 * u) / (2.0 * lam)
    s_ab = 0.5 * em1 * em1 / (lam * lam)
    s_aa = _f_aa(u) / lam**3
    if t_arr.ndim == 0:
        return TransitionCovariance(float(t_arr), float(s_aa), float(s_ab), float(s_bb))
    return TransitionCovariance(t_arr, s_aa, s_ab, s_bb)


def conditional_variance(t, p: ModelParams):
    """Variance of ``A_t`` given ``B_t`` (independent of the conditioning value)."""
    c = covariance(t, p)
    if np.any(np.asarray(c.s_bb) <= 0):
        raise DegenerateConditioningError("B_t has zero variance at t = 0")
    var = c.s_aa - c.s_ab * c.s_ab / c.s_bb
    return np.maximum(var, 0.0) if np.ndim(var) else max(float(var), 0.0)


def conditional_a_given_b(t: float, b, p: ModelParams) -> ConditionalGaussian:
    """Gaussian law of ``A_t`` given ``B_t = b``."""
    c = covariance(t, p)
    if c.s_bb <= 0:
        raise DegenerateConditioningError("B_t has zero variance at t = 0")
    slope = c.s_ab / c.s_bb
    mean = slope * np.asarray(b, dtype=float)
    return ConditionalGaussian(mean if mean.ndim else float(mean), conditional_variance(t, p))


def noise_factor(cov: TransitionCovariance) -> np.ndarray:
    """Lower factor ``F`` with ``F F^T = Cov(B, A)`` (note the B-first order)."""
    if cov.s_bb > _PIVOT_FLOOR:
        sb = math.sqrt(cov.s_bb)
        cond = cov.s_aa - cov.s_ab * cov.s_ab / cov.s_bb
        if cond >= -_PIVOT_FLOOR:
            return np.array([[sb, 0.0], [cov.s_ab / sb, math.sqrt(max(cond, 0.0))]])
    # nearly rank-deficient: symmetric square root
    m = np.array([[cov.s_bb, cov.s_ab], [cov.s_ab, cov.s_aa]], dtype=float)
    w, q = np.linalg.eigh(m)
    return q @ np.diag(np.sqrt(np.clip(w, 0.0, None))) @ q.T


def sample_noise(t: float, p: ModelParams, rng: np.random.Generator, size=None):
    """Draw ``(A_t, B_t)`` exactly. Returns two arrays of shape ``size``."""
    cov = covariance(t, p)
    F = noise_factor(cov)
    shape = () if size is None else tuple(np.atleast_1d(size))
    xi = rng.standard_normal(shape + (2,))
    b = F[0, 0] * xi[..., 0] + F[0, 1] * xi[..., 1]
    a = F[1, 0] * xi[..., 0] + F[1, 1] * xi[..., 1]
    if size is None:
        return float(a), float(b)
    return a, b


def drift_factor(t, p: ModelParams):
    """``(1 - e^{-lambda t}) / lambda``: displacement per unit initial velocity."""
    return -np.expm1(-p.lam * np.asarray(t, dtype=float)) / p.lam


def propagate(x0, v0, t: float, a, b, p: ModelParams):
    """Apply the explicit solution for given noise ``(a, b)``."""
    x = wrap(np.asarray(x0, dtype=float) + drift_factor(t, p) * v0 + a, p.L)
    v = math.exp(-p.lam * t) * np.asarray(v0, dtype=float) + b
    return x, (v if np.ndim(v) else float(v))


def sample_transition(x0, v0, t: float, p: ModelParams, rng: np.random.Generator, size=None):
    """Sample the time-``t`` state started from ``(x0, v0)``.

    ``x0`` and ``v0`` broadcast against ``size`` (default: their common shape).
    """
    if not t >= 0:
        raise ParameterError("t must be nonnegative")
    if size is None:
        shape = np.broadcast(np.asarray(x0), np.asarray(v0)).shape
        size = shape if shape else None
    a, b = sample_noise(t, p, rng, size)
    return propagate(x0, v0, t, a, b, p)


def drift_corrected(x, v, p: ModelParams):
    """Position ``x + v / lambda`` on the torus; evolves as a Brownian motion of rate 1/lambda^2."""
    return wrap(np.asarray(x, dtype=float) + np.asarray(v, dtype=float) / p.lam, p.L)
