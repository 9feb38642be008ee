"""Couplings of two kinetic Fokker-Planck particles.

Two constructions are provided:

* ``mixture_coupling``: one-shot coupling at a fixed time. Given the common
  velocity noise ``B``, the wrapped conditional law of the position noise
  contains a uniform component of mass ``beta``; with that probability both
  particles are sent to a shared uniform point, otherwise both receive the same
  residual draw.
* reflection/synchronisation coupling in drift-corrected coordinates
  ``Y = X + V / lambda``: particle 2 is driven by ``-dW`` until ``Y^1`` and
  ``Y^2`` meet, then by ``dW``.

Everything is vectorised over a batch of pairs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DegenerateConditioningError, ParameterError, SpreadingUnavailableError
from .kernel import (
    ModelParams,
    conditional_variance,
    covariance,
    drift_corrected,
    propagate,
    sample_noise,
)
from .torus import spreading_beta, torus_dist, wrap, wrapped_pdf

_MAX_PROPOSALS = 1 << 22


@dataclass(frozen=True)
class CoupledPair:
    """A batch of pairs ``((x1, v1), (x2, v2))``; all fields share one shape."""

    x1: np.ndarray
    v1: np.ndarray
    x2: np.ndarray
    v2: np.ndarray

    @classmethod
    def from_points(cls, p1, p2, L: float, n: int | None = None) -> "CoupledPair":
        """Build a batch from two ``(x, v)`` points, optionally replicated ``n`` times."""
        shape = () if n is None else (n,)
        f = lambda c: np.full(shape, float(c))  # noqa: E731
        return cls(wrap(f(p1[0]), L), f(p1[1]), wrap(f(p2[0]), L), f(p2[1]))

    def __post_init__(self):
        arrs = [np.asarray(a, dtype=float) for a in (self.x1, self.v1, self.x2, self.v2)]
        shape = np.broadcast_shapes(*(a.shape for a in arrs))
        for name, a in zip(("x1", "v1", "x2", "v2"), arrs):
            object.__setattr__(self, name, np.broadcast_to(a, shape).copy())

    def __len__(self) -> int:
        return int(self.x1.size)

    def spatial_sq(self, L: float) -> np.ndarray:
        return torus_dist(self.x1, self.x2, L) ** 2

    def velocity_sq(self) -> np.ndarray:
        return (self.v1 - self.v2) ** 2


# ---------------------------------------------------------------------------
# one-shot mixture coupling


def mixture_beta(t: float, p: ModelParams) -> float:
    """Uniform fraction of the wrapped conditional law of ``A_t`` given ``B_t``.

    The conditional variance does not depend on the conditioning value, so this
    holds uniformly in ``b``. Returns 0 when the spreading estimate is vacuous.
    """
    try:
        s2 = conditional_variance(t, p)
    except DegenerateConditioningError:
        return 0.0
    if s2 <= 0:
        return 0.0
    return spreading_beta(s2, p.L)


def _require_beta(t: float, p: ModelParams) -> float:
    beta = mixture_beta(t, p)
    if not beta > 0:
        raise SpreadingUnavailableError(
            f"no uniform component at t={t} (lambda={p.lam}, L={p.L}); choose a larger t"
        )
    return beta


def residual_density(a, t: float, b, p: ModelParams, beta: float | None = None):
    """Density of the residual part ``s(t, a, b) = (Qg - beta/2piL) / (1 - beta)``."""
    if beta is None:
        beta = _require_beta(t, p)
    c = covariance(t, p)
    s2 = conditional_variance(t, p)
    q = wrapped_pdf(a, c.s_ab / c.s_bb * np.asarray(b, dtype=float), s2, p.L)
    return (q - beta / p.period) / (1.0 - beta)


def residual_sampler(t: float, b, p: ModelParams, rng: np.random.Generator, beta: float | None = None):
    """Draw from the residual density ``s(t, ., b)`` by rejection from the wrapped conditional law.

    ``b`` may be an array; one draw is returned per entry. Passing ``beta=0``
    degenerates to sampling the wrapped conditional Gaussian itself.
    """
    b = np.atleast_1d(np.asarray(b, dtype=float))
    beta_max = _require_beta(t, p) if beta is None else mixture_beta(t, p)
    if beta is None:
        beta = beta_max
    elif not 0 <= beta <= beta_max:
        raise ParameterError(f"beta={beta} exceeds the available uniform fraction {beta_max}")
    c = covariance(t, p)
    slope = c.s_ab / c.s_bb
    s2 = conditional_variance(t, p)
    sd = math.sqrt(s2)
    floor = beta / p.period

    out = np.empty_like(b)
    todo = np.arange(b.size)
    while todo.size:
        k = int(np.clip(math.ceil(1.5 / max(1.0 - beta, 1e-300)), 1, max(1, _MAX_PROPOSALS // todo.size)))
        centers = slope * b[todo]
        prop = wrap(centers[:, None] + sd * rng.standard_normal((todo.size, k)), p.L)
        u = rng.random((todo.size, k))
        if beta > 0:
            dens = wrapped_pdf(prop, centers[:, None], s2, p.L)
            accept = u * dens < dens - floor
        else:
            accept = np.ones_like(u, dtype=bool)
        any_acc = accept.any(axis=1)
        first = accept.argmax(axis=1)
        done = todo[any_acc]
        out[done] = prop[any_acc, first[any_acc]]
        todo = todo[~any_acc]
    return out


def mixture_coupling(pair0: CoupledPair, t: float, p: ModelParams, rng: np.random.Generator) -> CoupledPair:
    """Couple the time-``t`` laws started from each pair in ``pair0``.

    Each marginal has the exact transition law; velocities contract path-wise
    as ``v1 - v2 = e^{-lambda t} (v1_0 - v2_0)``.
    """
    beta = _require_beta(t, p)
    n = len(pair0)
    shape = pair0.x1.shape
    c = covariance(t, p)
    b = math.sqrt(c.s_bb) * rng.standard_normal(n)
    z = rng.random(n)
    u = rng.random(n) * p.period
    uniform = z <= beta
    s = np.zeros(n)
    rest = ~uniform
    if rest.any():
        s[rest] = residual_sampler(t, b[rest], p, rng, beta=beta)

    decay = math.exp(-p.lam * t)
    out = []
    for x0, v0 in ((pair0.x1.ravel(), pair0.v1.ravel()), (pair0.x2.ravel(), pair0.v2.ravel())):
        x, _ = propagate(x0, v0, t, s, 0.0, p)
        x = np.where(uniform, u, x)
        v = decay * v0 + b
        out.append((x.reshape(shape), v.reshape(shape)))
    return CoupledPair(out[0][0], out[0][1], out[1][0], out[1][1])


def synchronous_coupling(pair0: CoupledPair, t: float, p: ModelParams, rng: np.random.Generator) -> CoupledPair:
    """Drive both particles of each pair with one shared ``(A, B)`` draw."""
    if not t >= 0:
        raise ParameterError("t must be nonnegative")
    shape = pair0.x1.shape
    a, b = sample_noise(t, p, rng, max(len(pair0), 1) if shape else None)
    if shape:
        a, b = np.reshape(a, shape), np.reshape(b, shape)
    x1, v1 = propagate(pair0.x1, pair0.v1, t, a, b, p)
    x2, v2 = propagate(pair0.x2, pair0.v2, t, a, b, p)
    return CoupledPair(x1, v1, x2, v2)


# ---------------------------------------------------------------------------
# reflection / synchronisation coupling


@dataclass(frozen=True)
class CouplingPathState:
    """Batch state of the reflection coupling at time ``t``.

    ``m`` is the lifted difference ``Y^1 - Y^2`` in ``[0, 2 pi L]``, stopped at
    the boundary (0 or ``2 pi L``) it reached when the pair merged; on the torus
    the difference is 0 from then on. ``t_hit`` is NaN until the pair merges.
    """

    t: float
    y1: np.ndarray
    y2: np.ndarray
    v1: np.ndarray
    v2: np.ndarray
    m: np.ndarray
    merged: np.ndarray
    t_hit: np.ndarray = field(repr=False)

    @property
    def z(self) -> np.ndarray:
        return self.v1 - self.v2

    def m_torus_sq(self, L: float) -> np.ndarray:
        return torus_dist(self.y1, self.y2, L) ** 2

    def distance_sq(self, L: float) -> np.ndarray:
        """``|M_t|_T^2 + |Z_t|^2`` per path."""
        return self.m_torus_sq(L) + self.z**2

    def positions(self, p: ModelParams):
        """Back to ``(x1, x2)`` from drift-corrected coordinates."""
        return wrap(self.y1 - self.v1 / p.lam, p.L), wrap(self.y2 - self.v2 / p.lam, p.L)


def reflection_initial_state(pair0: CoupledPair, p: ModelParams) -> CouplingPathState:
    y1 = np.atleast_1d(drift_corrected(pair0.x1, pair0.v1, p)).ravel()
    y2 = np.atleast_1d(drift_corrected(pair0.x2, pair0.v2, p)).ravel()
    m = wrap(y1 - y2, p.L)
    merged = m == 0.0
    t_hit = np.where(merged, 0.0, np.nan)
    return CouplingPathState(
        0.0, y1, y2, pair0.v1.ravel().copy(), pair0.v2.ravel().copy(), m, merged, t_hit
    )


def _increment_cov(h: float, lam: float):
    """Covariance of ``(dW, int e^{-lam(h-s)} dW_s)`` over one step."""
    c = -math.expm1(-lam * h) / lam
    vj = -math.expm1(-2.0 * lam * h) / (2.0 * lam)
    return h, c, vj


def _split_increments(dw, j, theta, h, lam, xi):
    """Sample the part of ``(dW, J)`` accumulated on ``[0, theta h]`` given the totals."""
    tau = theta * h
    e = math.exp(-lam * h)
    # first sub-interval
    s11 = tau
    s12 = e * np.expm1(lam * tau) / lam
    s22 = e * e * np.expm1(2.0 * lam * tau) / (2.0 * lam)
    t11, t12, t22 = _increment_cov(h, lam)
    det = t11 * t22 - t12 * t12
    i11, i12, i22 = t22 / det, -t12 / det, t11 / det
    # K = S1 T^{-1}
    k11 = s11 * i11 + s12 * i12
    k12 = s11 * i12 + s12 * i22
    k21 = s12 * i11 + s22 * i12
    k22 = s12 * i12 + s22 * i22
    mean_a = k11 * dw + k12 * j
    mean_j = k21 * dw + k22 * j
    # conditional covariance S1 - K S1
    c11 = np.maximum(s11 - (k11 * s11 + k12 * s12), 0.0)
    c12 = s12 - (k11 * s12 + k12 * s22)
    c22 = np.maximum(s22 - (k21 * s12 + k22 * s22), 0.0)
    l11 = np.sqrt(c11)
    l21 = np.where(l11 > 0, c12 / np.where(l11 > 0, l11, 1.0), 0.0)
    l22 = np.sqrt(np.maximum(c22 - l21 * l21, 0.0))
    a1 = mean_a + l11 * xi[:, 0]
    j1 = mean_j + l21 * xi[:, 0] + l22 * xi[:, 1]
    return a1, j1


def reflection_coupling_step(
    s: CouplingPathState, h: float, p: ModelParams, rng: np.random.Generator
) -> CouplingPathState:
    """Advance every path of the batch by ``h`` using the exact one-step law.

    A merge inside the step is detected either from the lifted difference
    leaving ``(0, 2 pi L)`` or from the Brownian-bridge crossing probability
    when both endpoints stay inside. The rest of the step after the merge is run
    in synchronised mode.
    """
    if not h > 0:
        raise ParameterError("step size h must be positive")
    lam, P = p.lam, p.period
    n = s.y1.size
    var_w, cov_wj, var_j = _increment_cov(h, lam)
    xi = rng.standard_normal((n, 2))
    dw = math.sqrt(var_w) * xi[:, 0]
    j = cov_wj / math.sqrt(var_w) * xi[:, 0] + math.sqrt(max(var_j - cov_wj * cov_wj / var_w, 0.0)) * xi[:, 1]
    u = rng.random(n)
    xi_split = rng.standard_normal((n, 2))

    live = ~s.merged
    m = s.m.copy()
    m_new = m + (2.0 / lam) * dw
    sd2 = (4.0 / lam**2) * h
    lo = live & (m_new <= 0.0)
    hi = live & (m_new >= P)
    inside = live & ~lo & ~hi
    with np.errstate(over="ignore", invalid="ignore"):
        p_lo = np.exp(-2.0 * m * m_new / sd2)
        p_hi = np.exp(-2.0 * (P - m) * (P - m_new) / sd2)
    bridge = inside & (u < p_lo + p_hi)
    hit = lo | hi | bridge

    theta = np.full(n, 0.5)
    with np.errstate(divide="ignore", invalid="ignore"):
        theta = np.where(lo, m / (m - m_new), theta)
        theta = np.where(hi, (P - m) / (m_new - m), theta)
    theta = np.clip(theta, 0.0, 1.0)

    # particle 2 increments: reflected before the merge, shared after
    dw2 = np.where(s.merged, dw, -dw)
    j2 = np.where(s.merged, j, -j)
    if hit.any():
        idx = np.flatnonzero(hit)
        a1, j1 = _split_increments(dw[idx], j[idx], theta[idx], h, lam, xi_split[idx])
        dw2[idx] = dw[idx] - 2.0 * a1
        j2[idx] = j[idx] - 2.0 * j1

    decay = math.exp(-lam * h)
    y1 = wrap(s.y1 + dw / lam, p.L)
    v1 = decay * s.v1 + j
    v2 = decay * s.v2 + j2
    y2 = wrap(s.y2 + dw2 / lam, p.L)
    y2 = np.where(s.merged | hit, y1, y2)

    exit_hi = hi | (bridge & (u >= p_lo))
    m = np.where(live & ~hit, m_new, m)
    m = np.where(hit, np.where(exit_hi, P, 0.0), m)
    t_hit = np.where(hit, s.t + theta * h, s.t_hit)
    return CouplingPathState(s.t + h, y1, y2, v1, v2, m, s.merged | hit, t_hit)


def default_step(p: ModelParams) -> float:
    return 1e-3 * min(1.0, p.lam**2 * p.L**2)


def simulate_reflection_coupling(
    pair0: CoupledPair,
    times,
    h: float,
    p: ModelParams,
    rng: np.random.Generator,
) -> list[CouplingPathState]:
    """Run the coupling and return snapshots at each of ``times`` (nondecreasing, >= 0).

    Between snapshots the interval is cut into equal steps no longer than ``h``.
    """
    if not h > 0:
        raise ParameterError("step size h must be positive")
    times = np.asarray(times, dtype=float)
    if times.size and (times[0] < 0 or np.any(np.diff(times) < 0)):
        raise ParameterError("times must be nonnegative and nondecreasing")
    state = reflection_initial_state(pair0, p)
    out = []
    for target in times:
        gap = target - state.t
        if gap > 1e-12 * max(1.0, target):
            k = int(math.ceil(gap / h - 1e-9))
            dt = gap / k
            for _ in range(k):
                state = reflection_coupling_step(state, dt, p, rng)
            state = replace(state, t=float(target))
        out.append(state)
    return out


def run_reflection_coupling(
    pair0: CoupledPair,
    t_end: float,
    h: float,
    p: ModelParams,
    rng: np.random.Generator,
) -> list[CouplingPathState]:
    """Full trajectory at step resolution, starting with the ``t = 0`` state."""
    if not t_end > 0:
        raise ParameterError("t_end must be positive")
    if not h > 0:
        raise ParameterError("step size h must be positive")
    k = int(math.ceil(t_end / h - 1e-9))
    return simulate_reflection_coupling(pair0, np.linspace(0.0, t_end, k + 1), h, p, rng)


# ---------------------------------------------------------------------------
# stopping time of the reflection phase


def _check_m0(m0, L):
    m0 = np.asarray(m0, dtype=float)
    if np.any((m0 < 0) | (m0 > 2.0 * math.pi * L)):
        raise ParameterError("m0 must lie in [0, 2 pi L]")
    return m0


def _tail_series(t, m0, p, tol):
    lam2L2 = p.lam**2 * p.L**2
    out = 0.0
    k = 0
    while True:
        n = 2 * k + 1
        env = (4.0 / math.pi) / n * math.exp(-n * n * t / (2.0 * lam2L2))
        if env < tol and k > 0:
            break
        out += env * math.sin(n * m0 / (2.0 * p.L))
        k += 1
    return out


def _tail_images(t, m0, p):
    from scipy.special import ndtr

    a = 2.0 * math.pi * p.L
    s = (2.0 / p.lam) * math.sqrt(t)
    N = int(math.ceil(10.0 * s / a)) + 2
    n = np.arange(-N, N + 1, dtype=float)
    shift = 2.0 * n * a
    total = (
        ndtr((a - m0 - shift) / s)
        - ndtr((-m0 - shift) / s)
        - ndtr((a + m0 - shift) / s)
        + ndtr((m0 - shift) / s)
    )
    return float(total.sum())


def stopping_time_tail(t: float, m0: float, p: ModelParams, tol: float = 1e-12) -> float:
    """``P(T > t | M_0 = m0)`` for the merge time of the reflection coupling.

    ``M`` is a Brownian motion with variance ``4/lambda^2`` per unit time,
    absorbed at 0 and ``2 pi L``. The eigenfunction series is used for
    ``t >= lambda^2 L^2 / 50``, the method-of-images sum below that.
    """
    m0 = float(_check_m0(m0, p.L))
    if not t >= 0:
        raise ParameterError("t must be nonnegative")
    if not tol > 0:
        raise ParameterError("tol must be positive")
    if m0 == 0.0 or m0 == 2.0 * math.pi * p.L:
        return 0.0
    if t == 0:
        return 1.0
    if t < p.lam**2 * p.L**2 / 50.0:
        val = _tail_images(t, m0, p)
    else:
        val = _tail_series(t, m0, p, tol)
    return min(1.0, max(0.0, val))


def tail_bound_constant(p: ModelParams) -> float:
    return 2.0 / (math.pi * p.L) * max(1.0, math.sqrt(math.pi * p.lam**2 * p.L**2 / 8.0))


def stopping_time_tail_bound(t: float, m0: float, p: ModelParams) -> float:
    """Upper bound ``C |m0|_T (1 + t^{-1/2}) e^{-t / (2 lambda^2 L^2)}`` on the merge-time tail."""
    if not t > 0:
        raise ParameterError("the tail bound blows up at t = 0")
    m0 = float(_check_m0(m0, p.L))
    mt = torus_dist(m0, 0.0, p.L)
    return tail_bound_constant(p) * mt * (1.0 + t**-0.5) * math.exp(-t / (2.0 * p.lam**2 * p.L**2))


def rate_regime(p: ModelParams) -> str:
    """Which of ``2 lambda`` and ``1/(2 lambda^2 L^2)`` is smaller: 'velocity', 'critical' or 'spatial'."""
    vel = 2.0 * p.lam
    spat = 1.0 / (2.0 * p.lam**2 * p.L**2)
    if math.isclose(vel, spat, rel_tol=1e-12):
        return "critical"
    return "velocity" if vel < spat else "spatial"


def second_moment_bound(t, z0: float, m0: float, C: float, p: ModelParams):
    """Bound on ``E[|M_t|_T^2 + |Z_t|^2]``; ``m0`` is the initial torus distance ``|M_0|_T``."""
    if not C > 0:
        raise ParameterError("C must be positive")
    t = np.asarray(t, dtype=float)
    regime = rate_regime(p)
    if regime == "velocity":
        r = np.exp(-2.0 * p.lam * t)
    elif regime == "critical":
        r = (1.0 + t) * np.exp(-2.0 * p.lam * t)
    else:
        r = np.exp(-t / (2.0 * p.lam**2 * p.L**2))
    out = z0 * z0 * np.exp(-2.0 * p.lam * t) + C * abs(m0) * r
    return out if out.ndim else float(out)


def z_second_moment_ode(t, z0: float, m0: float, p: ModelParams) -> float:
    """Solve ``d/dt E Z^2 = -2 lambda E Z^2 + 4 P(t <= T)`` by quadrature.

    Before the merge the velocity gap is driven by ``2 dW``, so Ito's formula
    gives the forcing ``4 P(t <= T)``.
    """
    from scipy.integrate import quad

    lam = p.lam
    if t == 0:
        return z0 * z0
    f = lambda s: math.exp(-2.0 * lam * (t - s)) * stopping_time_tail(s, m0, p)  # noqa: E731
    pts = [x for x in (lam**2 * p.L**2 / 50.0,) if x < t]
    integral, _ = quad(f, 0.0, t, points=pts or None, limit=200, epsabs=1e-12, epsrel=1e-10)
    return z0 * z0 * math.exp(-2.0 * lam * t) + 4.0 * integral
