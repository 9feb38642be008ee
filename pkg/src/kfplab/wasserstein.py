"""Exact W2 between equal-size empirical measures on T x R.

Ground cost is the cylinder metric ``|x - y|_T^2 + (v - w)^2``. The optimal
assignment is found with scipy's shortest-augmenting-path solver, which is
exact and deterministic.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ParameterError, SizeMismatchError
from .torus import torus_dist, wrap

MAX_POINTS = 4096


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Equally weighted points ``(x[i], v[i])``."""

    x: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        x = np.atleast_1d(np.asarray(self.x, dtype=float)).ravel()
        v = np.atleast_1d(np.asarray(self.v, dtype=float)).ravel()
        if x.shape != v.shape:
            raise SizeMismatchError("x and v must have the same length")
        if x.size < 1:
            raise ParameterError("an empirical measure needs at least one point")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "v", v)

    def __len__(self):
        return self.x.size

    @classmethod
    def canonical(cls, x, v, L: float) -> "EmpiricalMeasure":
        return cls(wrap(np.asarray(x, dtype=float), L), v)


def ground_cost(p, q, L: float):
    """Squared cylinder distance between phase points ``p = (x, v)`` and ``q``."""
    return torus_dist(p[0], q[0], L) ** 2 + (np.asarray(p[1], dtype=float) - q[1]) ** 2


def cost_matrix(mu: EmpiricalMeasure, nu: EmpiricalMeasure, L: float, block_rows: int | None = None):
    """Full ``n x m`` ground-cost matrix, optionally filled ``block_rows`` rows at a time."""
    n = len(mu)
    if block_rows is None:
        return torus_dist(mu.x[:, None], nu.x[None, :], L) ** 2 + (mu.v[:, None] - nu.v[None, :]) ** 2
    out = np.empty((n, len(nu)))
    for lo in range(0, n, block_rows):
        hi = min(n, lo + block_rows)
        out[lo:hi] = (
            torus_dist(mu.x[lo:hi, None], nu.x[None, :], L) ** 2 + (mu.v[lo:hi, None] - nu.v[None, :]) ** 2
        )
    return out


def optimal_assignment(
    mu: EmpiricalMeasure, nu: EmpiricalMeasure, L: float, max_n: int = MAX_POINTS, block_rows: int | None = None
):
    """Return ``(perm, costs)``: ``mu[i]`` is sent to ``nu[perm[i]]`` at cost ``costs[i]``."""
    if len(mu) != len(nu):
        raise SizeMismatchError(f"measures have different sizes: {len(mu)} and {len(nu)}")
    if len(mu) > max_n:
        raise ParameterError(f"n={len(mu)} exceeds the cap max_n={max_n}")
    C = cost_matrix(mu, nu, L, block_rows)
    rows, cols = linear_sum_assignment(C)
    return cols, C[rows, cols]


def w2(mu: EmpiricalMeasure, nu: EmpiricalMeasure, L: float, max_n: int = MAX_POINTS, block_rows: int | None = None) -> float:
    _, costs = optimal_assignment(mu, nu, L, max_n, block_rows)
    return math.sqrt(max(costs.mean(), 0.0))


def w2_with_se(mu: EmpiricalMeasure, nu: EmpiricalMeasure, L: float, **kw):
    """W2 and a delta-method standard error from the spread of matched costs."""
    _, costs = optimal_assignment(mu, nu, L, **kw)
    w = math.sqrt(max(costs.mean(), 0.0))
    n = costs.size
    se_sq = costs.std(ddof=1) / math.sqrt(n) if n > 1 else 0.0
    return w, (se_sq / (2.0 * w) if w > 0 else 0.0)


def w2_upper_from_coupling(pairs, L: float) -> float:
    """Root-mean-square cost of a given coupling: an upper bound on W2 of its marginals."""
    costs = coupling_costs(pairs, L)
    return math.sqrt(costs.mean())


def coupling_costs(pairs, L: float) -> np.ndarray:
    if len(pairs) == 0:
        raise ParameterError("need at least one coupled pair")
    return np.ravel(ground_cost((pairs.x1, pairs.v1), (pairs.x2, pairs.v2), L))


def marginals(pairs) -> tuple[EmpiricalMeasure, EmpiricalMeasure]:
    return EmpiricalMeasure(pairs.x1, pairs.v1), EmpiricalMeasure(pairs.x2, pairs.v2)
