"""Brownian path simulators used by the experiments.

The absorbed-difference kernel is compiled with numba: it is called with
10^5 paths at step 1e-4, which is far too slow as a numpy loop.
"""
from __future__ import annotations

import math

import numba
import numpy as np

from .errors import ParameterError
from .torus import torus_dist


@numba.njit(cache=True)
def _absorbed_bm_kernel(rng, m0, sigma, a, times, h, n, out_m, out_hit):
    nt = times.shape[0]
    for i in range(n):
        m = m0
        t = 0.0
        alive = m0 > 0.0 and m0 < a
        hit = 0.0 if not alive else np.inf
        for k in range(nt):
            target = times[k]
            while alive and t < target - 1e-12:
                remaining = target - t
                nsub = math.ceil(remaining / h - 1e-9)
                dt = remaining / nsub
                sd = sigma * math.sqrt(dt)
                sd2 = sd * sd
                mn = m + sd * rng.standard_normal()
                if mn <= 0.0:
                    hit = t + dt * m / (m - mn)
                    m = 0.0
                    alive = False
                elif mn >= a:
                    hit = t + dt * (a - m) / (mn - m)
                    m = a
                    alive = False
                else:
                    e_lo = 2.0 * m * mn / sd2
                    e_hi = 2.0 * (a - m) * (a - mn) / sd2
                    p_lo = math.exp(-e_lo) if e_lo < 40.0 else 0.0
                    p_hi = math.exp(-e_hi) if e_hi < 40.0 else 0.0
                    if p_lo + p_hi > 1e-17:
                        u = rng.random()
                        if u < p_lo:
                            hit = t + 0.5 * dt
                            m = 0.0
                            alive = False
                        elif u < p_lo + p_hi:
                            hit = t + 0.5 * dt
                            m = a
                            alive = False
                        else:
                            m = mn
                    else:
                        m = mn
                t += dt
            if t < target:
                t = target
            out_m[i, k] = m
        out_hit[i] = hit


def absorbed_bm(m0: float, sigma: float, a: float, times, h: float, n: int, rng: np.random.Generator):
    """Brownian motion ``m0 + sigma W`` absorbed at 0 and ``a``.

    Returns ``(m, hit)``: the stopped position at each of ``times`` (shape
    ``(n, len(times))``) and the absorption time per path (``inf`` if none).
    Exit between grid points is caught by the Brownian-bridge crossing
    probability, so the absorbed law is sampled without the usual
    ``O(sqrt(h))`` bias.
    """
    if not (sigma > 0 and a > 0 and h > 0):
        raise ParameterError("sigma, a and h must be positive")
    if not 0.0 <= m0 <= a:
        raise ParameterError("m0 must lie in [0, a]")
    times = np.ascontiguousarray(times, dtype=float)
    if times.size and (times[0] < 0 or np.any(np.diff(times) < 0)):
        raise ParameterError("times must be nonnegative and nondecreasing")
    out_m = np.empty((n, times.size))
    out_hit = np.empty(n)
    _absorbed_bm_kernel(rng, float(m0), float(sigma), float(a), times, float(h), int(n), out_m, out_hit)
    return out_m, out_hit


COUPLING_KINDS = ("reflection", "synchronous", "independent")


def torus_bm_pair(
    z: float,
    kind: str,
    times,
    h: float,
    L: float,
    n: int,
    rng: np.random.Generator,
    rate: float = 1.0,
):
    """Difference ``D = W^1 - W^2`` of two coupled Brownian motions on the torus.

    Both motions have variance ``rate`` per unit time and start at distance
    ``z``. Returns ``(d, qv)``: the lifted difference and its quadratic
    variation at each of ``times``, both of shape ``(n, len(times))``.
    """
    times = np.asarray(times, dtype=float)
    if kind == "reflection":
        d, hit = absorbed_bm(z, 2.0 * math.sqrt(rate), 2.0 * math.pi * L, times, h, n, rng)
        qv = 4.0 * rate * np.minimum(times[None, :], hit[:, None])
    elif kind == "synchronous":
        d = np.full((n, times.size), float(z))
        qv = np.zeros((n, times.size))
    elif kind == "independent":
        dt = np.diff(times, prepend=0.0)
        steps = rng.standard_normal((n, times.size)) * np.sqrt(2.0 * rate * dt)
        d = z + np.cumsum(steps, axis=1)
        qv = np.broadcast_to(2.0 * rate * times, (n, times.size)).copy()
    else:
        raise ParameterError(f"unknown coupling kind {kind!r}; expected one of {COUPLING_KINDS}")
    return d, qv


def h_process(d, qv, L: float):
    """``L sin(D / 2L) exp([D] / 8L^2)``, a martingale for any coupling of the two motions."""
    return L * np.sin(d / (2.0 * L)) * np.exp(qv / (8.0 * L * L))


def torus_sq(d, L: float):
    return torus_dist(d, 0.0, L) ** 2


@numba.njit(cache=True)
def _em_kinetic_kernel(rng, lam, h, times, n, out_a, out_b):
    nt = times.shape[0]
    for i in range(n):
        x = 0.0
        v = 0.0
        t = 0.0
        for k in range(nt):
            target = times[k]
            while t < target - 1e-12:
                remaining = target - t
                nsub = math.ceil(remaining / h - 1e-9)
                dt = remaining / nsub
                vn = v - lam * v * dt + math.sqrt(dt) * rng.standard_normal()
                x += 0.5 * (v + vn) * dt
                v = vn
                t += dt
            out_a[i, k] = x
            out_b[i, k] = v


def euler_maruyama_noise(lam: float, times, h: float, n: int, rng: np.random.Generator):
    """Time-stepped ``(A_t, B_t)`` started from rest, as a check on the closed form.

    Velocity follows Euler-Maruyama; position integrates velocity with the
    trapezoidal rule. Returns two arrays of shape ``(n, len(times))``.
    """
    if not (lam > 0 and h > 0):
        raise ParameterError("lambda and h must be positive")
    times = np.ascontiguousarray(times, dtype=float)
    out_a = np.empty((n, times.size))
    out_b = np.empty((n, times.size))
    _em_kinetic_kernel(rng, float(lam), float(h), times, int(n), out_a, out_b)
    return out_a, out_b
