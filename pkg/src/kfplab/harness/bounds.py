"""Deterministic bounds evaluated by the experiments."""
from __future__ import annotations

import math

import numpy as np
from scipy.special import erfc

from ..errors import DomainError, ParameterError
from ..kernel import ModelParams, covariance


def gaussian_two_sided_tail(d: float, var: float) -> float:
    """``P(|N(0, var)| > d)``."""
    if var <= 0:
        return 0.0
    return float(erfc(d / math.sqrt(2.0 * var)))


def non_contraction_bound(t: float, dist: float, p: ModelParams, exponent: float = 1.5) -> float:
    """Lower bound on ``W2(mu_t, nu_t)`` for two Dirac masses at rest, ``dist`` apart.

    Every coupling must move mass ``1 - 2 tail(d)`` across the gap between the
    windows ``[a - d, a + d]`` and ``[b - d, b + d]``, with ``d = dist t^exponent``.
    The tail is the exact Gaussian mass outside ``[-d, d]`` at variance
    ``Sigma_AA(t)``.
    """
    if not t > 0:
        raise ParameterError("t must be positive")
    if not 0 < dist <= math.pi * p.L:
        raise ParameterError("dist must lie in (0, pi L]")
    d = dist * t**exponent
    if 2.0 * d >= dist or d >= math.pi * p.L - dist / 2.0:
        raise DomainError(f"windows of half-width {d:.4g} overlap at t={t}; use a smaller t")
    tail = gaussian_two_sided_tail(d, covariance(t, p).s_aa)
    mass = max(0.0, 1.0 - 2.0 * tail)
    return math.sqrt((dist - 2.0 * d) ** 2 * mass)


def theorem_envelope(t, c: float, w0: float, p: ModelParams):
    """``(e^{-lambda t} + c e^{-t / 4 lambda^2 L^2}) w0``."""
    t = np.asarray(t, dtype=float)
    return (np.exp(-p.lam * t) + c * np.exp(-t / (4.0 * p.lam**2 * p.L**2))) * w0


def fit_envelope_constant(t: float, w: float, w0: float, p: ModelParams) -> float:
    """Smallest ``c`` for which the envelope passes through ``w`` at time ``t``."""
    return (w / w0 - math.exp(-p.lam * t)) * math.exp(t / (4.0 * p.lam**2 * p.L**2))


def greens_integral(z, p: ModelParams):
    """``E int_0^inf |M_t|_T^2 dt`` for the reflection coupling started at distance ``z``.

    ``M`` has variance ``4/lambda^2`` per unit time and is absorbed at 0 and
    ``2 pi L``; the expected occupation integral solves a two-point boundary
    problem with closed form ``(lambda^2 / 6)(pi^3 L^3 z - z^4 / 4)``.
    """
    z = np.asarray(z, dtype=float)
    out = p.lam**2 / 6.0 * ((math.pi * p.L) ** 3 * z - z**4 / 4.0)
    return out if out.ndim else float(out)
