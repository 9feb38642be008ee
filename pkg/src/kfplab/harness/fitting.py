"""Exponential decay-rate fits."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import FitWindowError


@dataclass(frozen=True)
class DecayFit:
    rate: float
    log_intercept: float
    r2: float
    window: tuple[float, float]
    rate_se: float = 0.0
    n_points: int = 0

    def predict(self, t):
        return np.exp(self.log_intercept - self.rate * np.asarray(t, dtype=float))


def _longest_run(mask: np.ndarray) -> tuple[int, int]:
    best = (0, 0)
    start = None
    for i, ok in enumerate(list(mask) + [False]):
        if ok and start is None:
            start = i
        elif not ok and start is not None:
            if i - start >= best[1] - best[0]:
                best = (start, i)
            start = None
    return best


def fit_rate(t, value, stderr=None, t_min: float | None = None, min_points: int = 4, snr: float = 3.0) -> DecayFit:
    """Weighted least-squares fit of ``log(value) = c - rate * t``.

    The window is the longest run of consecutive points (at ``t >= t_min``)
    whose value exceeds ``snr`` standard errors; later runs win ties. Weights
    are the inverse variances of ``log(value)`` when standard errors are
    given, uniform otherwise.
    """
    t = np.asarray(t, dtype=float)
    value = np.asarray(value, dtype=float)
    se = np.zeros_like(value) if stderr is None else np.asarray(stderr, dtype=float)
    ok = np.isfinite(value) & (value > 0) & (value > snr * se)
    if t_min is not None:
        ok &= t >= t_min
    lo, hi = _longest_run(ok)
    if hi - lo < min_points:
        raise FitWindowError(f"only {hi - lo} points with value > {snr} stderr (need {min_points})")
    tw, y = t[lo:hi], np.log(value[lo:hi])
    rel = se[lo:hi] / value[lo:hi]
    known = bool(np.all(rel > 0))
    if known:
        w = 1.0 / rel**2
    elif np.any(rel > 0):
        w = 1.0 / np.maximum(rel, rel[rel > 0].min()) ** 2
    else:
        w = np.ones_like(tw)
    W = w.sum()
    tbar = (w * tw).sum() / W
    ybar = (w * y).sum() / W
    sxx = (w * (tw - tbar) ** 2).sum()
    slope = (w * (tw - tbar) * (y - ybar)).sum() / sxx
    intercept = ybar - slope * tbar
    resid = y - (intercept + slope * tw)
    ss_res = (w * resid**2).sum()
    ss_tot = (w * (y - ybar) ** 2).sum()
    r2 = 1.0 if ss_tot == 0 else float(np.clip(1.0 - ss_res / ss_tot, 0.0, 1.0))
    n = tw.size
    if known:
        slope_se = math.sqrt(1.0 / sxx)
    else:
        slope_se = math.sqrt(ss_res / max(n - 2, 1) / sxx)
    return DecayFit(-slope, intercept, r2, (float(tw[0]), float(tw[-1])), slope_se, n)
