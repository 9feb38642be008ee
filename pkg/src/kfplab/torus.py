"""Geometry of the torus T = R / (2 pi L Z) and wrapped Gaussian densities.

All functions accept scalars or numpy arrays and broadcast. Coordinates are
canonicalized to ``[0, 2 pi L)``; signed differences are taken on the lift and
re-wrapped.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError

TWO_PI = 2.0 * math.pi
DEFAULT_TOL = 1e-12


def _check_L(L: float) -> None:
    if not L > 0:
        raise ParameterError(f"torus scale L must be positive, got {L!r}")


def period(L: float) -> float:
    _check_L(L)
    return TWO_PI * L


def wrap(x, L: float):
    """Canonical representative of ``x`` in ``[0, 2 pi L)``."""
    P = period(L)
    r = np.mod(x, P)
    # np.mod can return P itself for tiny negative inputs
    r = np.where(r >= P, 0.0, r)
    return r if np.ndim(r) else float(r)


def signed_diff(a, b, L: float):
    """Representative of ``a - b`` in ``[-pi L, pi L)``."""
    P = period(L)
    d = np.mod(np.asarray(a, dtype=float) - b + 0.5 * P, P) - 0.5 * P
    return d if np.ndim(d) else float(d)


def torus_dist(a, b, L: float):
    """Geodesic distance on the torus, in ``[0, pi L]``."""
    P = period(L)
    d = np.mod(np.asarray(a, dtype=float) - b, P)
    d = np.minimum(d, P - d)
    d = np.clip(d, 0.0, 0.5 * P)
    return d if np.ndim(d) else float(d)


def sin_metric_sq(a, b, L: float):
    """Smooth squared metric ``L^2 sin^2((a - b) / 2L)``.

    Equivalent to ``torus_dist**2`` with constants ``1/pi^2`` and ``1/4``
    that do not depend on ``L``.
    """
    _check_L(L)
    s = np.sin((np.asarray(a, dtype=float) - b) / (2.0 * L))
    out = L * L * s * s
    return out if np.ndim(out) else float(out)


# Extremes of sin^2(u)/u^2 on (0, pi/2].
SIN_METRIC_C1 = 1.0 / math.pi**2
SIN_METRIC_C2 = 0.25


def spreading_beta(sigma2, L: float):
    """Uniform mass fraction guaranteed in a wrapped Gaussian of variance ``sigma2``.

    Returns ``1 - 2q/(1-q)`` with ``q = exp(-sigma2 / 2L^2)``, clamped at 0
    where the estimate is vacuous.
    """
    _check_L(L)
    sigma2 = np.asarray(sigma2, dtype=float)
    if np.any(~(sigma2 > 0)):
        raise ParameterError("sigma2 must be positive")
    q = np.exp(-sigma2 / (2.0 * L * L))
    one_minus_beta = 2.0 * q / (-np.expm1(-sigma2 / (2.0 * L * L)))
    beta = np.maximum(0.0, 1.0 - one_minus_beta)
    return beta if beta.ndim else float(beta)


def _direct_terms(sigma2: float, L: float) -> int:
    return int(math.ceil(6.0 * math.sqrt(sigma2) / (TWO_PI * L))) + 2


def _fourier_terms(sigma2: float, L: float, tol: float) -> int:
    # tail after K is below (1/(pi L)) e^{-(K+1)^2 s} / (1 - e^{-3/2}), s = sigma2/2L^2 >= 1/2
    s = sigma2 / (2.0 * L * L)
    target = tol * math.pi * L * (1.0 - math.exp(-1.5))
    if target >= 1.0:
        return 1
    return max(1, int(math.ceil(math.sqrt(-math.log(target) / s))))


def wrapped_pdf(x, center, sigma2: float, L: float, tol: float = DEFAULT_TOL):
    """Density at ``x`` of a Gaussian with variance ``sigma2`` wrapped onto the torus.

    Uses the lattice sum over periods when ``sigma2 <= L^2`` and the Fourier
    series otherwise; both truncations keep the absolute error below ``tol``.
    """
    _check_L(L)
    if not sigma2 > 0:
        raise ParameterError(f"sigma2 must be positive, got {sigma2!r}")
    if not tol > 0:
        raise ParameterError("tol must be positive")
    P = TWO_PI * L
    d = signed_diff(x, center, L)
    d = np.asarray(d, dtype=float)
    if sigma2 <= L * L:
        N = _direct_terms(sigma2, L)
        n = np.arange(-N, N + 1, dtype=float)
        z = d[..., None] + P * n
        out = np.exp(-z * z / (2.0 * sigma2)).sum(axis=-1) / math.sqrt(TWO_PI * sigma2)
    else:
        K = _fourier_terms(sigma2, L, tol)
        k = np.arange(1, K + 1, dtype=float)
        coef = np.exp(-k * k * sigma2 / (2.0 * L * L))
        out = (1.0 + 2.0 * (coef * np.cos(d[..., None] * k / L)).sum(axis=-1)) / P
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class WrappedGaussian:
    center: float
    sigma2: float
    L: float

    def __post_init__(self):
        _check_L(self.L)
        if not self.sigma2 > 0:
            raise ParameterError("sigma2 must be positive")
        object.__setattr__(self, "center", wrap(self.center, self.L))

    def pdf(self, x, tol: float = DEFAULT_TOL):
        return wrapped_pdf(x, self.center, self.sigma2, self.L, tol)

    @property
    def beta(self) -> float:
        return spreading_beta(self.sigma2, self.L)

    def sample(self, rng: np.random.Generator, size=None):
        z = rng.standard_normal(size)
        return wrap(self.center + math.sqrt(self.sigma2) * z, self.L)
