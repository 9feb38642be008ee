import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from kfplab.couplings import (
    CoupledPair,
    default_step,
    _tail_images,
    _tail_series,
    mixture_beta,
    mixture_coupling,
    rate_regime,
    reflection_initial_state,
    residual_density,
    residual_sampler,
    second_moment_bound,
    simulate_reflection_coupling,
    stopping_time_tail,
    stopping_time_tail_bound,
    synchronous_coupling,
    z_second_moment_ode,
)
from kfplab.errors import ParameterError, SpreadingUnavailableError
from kfplab.kernel import ModelParams, conditional_variance, covariance, sample_transition
from kfplab.pathsim import absorbed_bm
from kfplab.torus import spreading_beta, torus_dist

P = ModelParams(1.0, 1.0)
TWO_PI = 2 * math.pi


def test_mixture_beta_is_spreading_of_conditional_law():
    assert mixture_beta(5.0, P) == spreading_beta(conditional_variance(5.0, P), 1.0)
    assert mixture_beta(1.0, P) == 0.0
    assert mixture_beta(0.0, P) == 0.0
    with pytest.raises(SpreadingUnavailableError):
        mixture_coupling(CoupledPair.from_points((0, 0), (1, 0), 1.0, 4), 1.0, P, np.random.default_rng(0))


@pytest.mark.parametrize("t", [4.5, 6.0, 10.0])
def test_residual_density_is_a_density(t):
    val, _ = integrate.quad(lambda a: residual_density(a, t, 0.3, P), 0, TWO_PI, limit=200)
    assert val == pytest.approx(1.0, abs=1e-10)
    grid = np.linspace(0, TWO_PI, 5001)
    assert residual_density(grid, t, 0.3, P).min() >= -1e-15


def test_residual_sampler_matches_density():
    t, b = 5.0, 0.4
    draws = residual_sampler(t, np.full(20_000, b), P, np.random.default_rng(2))
    grid = np.linspace(0, TWO_PI, 20001)
    dens = residual_density(grid, t, b, P)
    cdf = integrate.cumulative_trapezoid(dens, grid, initial=0.0)
    pval = stats.kstest(draws, lambda a: np.interp(a, grid, cdf)).pvalue
    assert pval > 0.01


def test_residual_sampler_rejects_excess_beta():
    with pytest.raises(ParameterError):
        residual_sampler(5.0, np.zeros(3), P, np.random.default_rng(0), beta=0.99)


def test_residual_sampler_beta_zero_is_conditional_gaussian():
    t, b = 2.0, -0.5
    c = covariance(t, P)
    draws = residual_sampler(t, np.full(20_000, b), P, np.random.default_rng(3), beta=0.0)
    mu, s2 = c.s_ab / c.s_bb * b, conditional_variance(t, P)
    k = np.arange(-20, 21)[:, None]

    def cdf(x):
        x = np.atleast_1d(x)[None, :]
        s = math.sqrt(s2)
        return (stats.norm.cdf((x - mu + k * TWO_PI) / s) - stats.norm.cdf((-mu + k * TWO_PI) / s)).sum(0)

    assert stats.kstest(draws, cdf).pvalue > 0.01


def test_mixture_coupling_uniform_fraction_merges_positions():
    t = 6.0
    pairs = CoupledPair.from_points((0.0, 0.0), (math.pi, 0.0), 1.0, 20_000)
    out = mixture_coupling(pairs, t, P, np.random.default_rng(4))
    merged = torus_dist(out.x1, out.x2, 1.0) < 1e-12
    beta = mixture_beta(t, P)
    assert abs(merged.mean() - beta) < 4 * math.sqrt(beta * (1 - beta) / merged.size)
    # with equal velocities and no uniform draw the gap is carried unchanged
    assert np.allclose(torus_dist(out.x1, out.x2, 1.0)[~merged], math.pi)


def test_synchronous_coupling_pathwise():
    p = ModelParams(0.8, 1.0)
    pairs = CoupledPair.from_points((0.2, 1.0), (1.0, -0.5), 1.0, 1000)
    out = synchronous_coupling(pairs, 1.5, p, np.random.default_rng(5))
    dv = math.exp(-0.8 * 1.5) * 1.5
    np.testing.assert_allclose(out.v1 - out.v2, dv, atol=1e-13)
    gap = -0.8 + (1 - math.exp(-1.2)) * 1.5 / 0.8
    assert np.allclose(torus_dist(out.x1 - out.x2, gap, 1.0), 0.0, atol=1e-12)


def test_coupled_pair_validates_shapes():
    with pytest.raises(Exception):
        CoupledPair(np.zeros(3), np.zeros(2), np.zeros(3), np.zeros(3))


# ---------------------------------------------------------------------------
# reflection coupling


def _run(pair_pts, n, times, h=5e-3, seed=0, p=P):
    pairs = CoupledPair.from_points(*pair_pts, p.L, n)
    return simulate_reflection_coupling(pairs, times, h, p, np.random.default_rng(seed))


def test_reflection_trivial_cases():
    (s,) = _run(((1.0, 0.0), (1.0, 0.0)), 50, [2.0])
    assert np.all(s.distance_sq(1.0) == 0.0)
    states = _run(((-1.0, 1.0), (0.0, 0.0)), 50, [0.5, 2.0])  # y1 = y2, z0 = 1
    for st_ in states:
        np.testing.assert_allclose(st_.distance_sq(1.0), math.exp(-2 * st_.t), rtol=1e-12)


def test_reflection_marginals_are_exact_kernel():
    # two-sample KS against the exact kernel at the default step; the mid-step
    # merge keeps marginals exact to O(h), which this sample size cannot see
    t, n = 1.0, 10_000
    p1, p2 = (0.0, 0.0), (math.pi, 0.5)
    (s,) = _run((p1, p2), n, [t], h=default_step(P), seed=6)
    x1, x2 = s.positions(P)
    rng = np.random.default_rng(60)
    pv = []
    for (x0, v0), xs, vs in ((p1, x1, s.v1), (p2, x2, s.v2)):
        xr, vr = sample_transition(x0, v0, t, P, rng, size=n)
        pv.append(stats.ks_2samp(xs, xr).pvalue)
        pv.append(stats.ks_2samp(vs, vr).pvalue)
    assert min(pv) > 0.01, pv


def test_reflection_velocity_contracts_after_merge():
    states = _run(((0.0, 0.0), (0.5, 0.0)), 400, [1.0, 3.0], h=2e-3, seed=7)
    s1, s3 = states
    both = s1.merged
    np.testing.assert_allclose(s3.z[both], s1.z[both] * math.exp(-2.0), rtol=1e-10, atol=1e-13)
    assert np.all(s3.m_torus_sq(1.0)[both] == 0.0)


def test_reflection_optional_stopping_and_survival():
    m0 = math.pi / 2
    (s,) = _run(((m0, 0.0), (0.0, 0.0)), 8000, [1.0], h=2e-3, seed=8)
    se = s.m.std(ddof=1) / math.sqrt(s.m.size)
    assert abs(s.m.mean() - m0) < 3 * se
    surv = 1.0 - s.merged.mean()
    exact = stopping_time_tail(1.0, m0, P)
    assert abs(surv - exact) < 3 * math.sqrt(exact * (1 - exact) / s.m.size)


def test_reflection_stream_order_is_deterministic():
    a = _run(((0.0, 0.3), (2.0, 0.0)), 100, [0.5], seed=9)[0]
    b = _run(((0.0, 0.3), (2.0, 0.0)), 100, [0.5], seed=9)[0]
    assert np.array_equal(a.y2, b.y2) and np.array_equal(a.v2, b.v2)


def test_reflection_initial_state_uses_drift_corrected_gap():
    p = ModelParams(2.0, 1.0)
    s = reflection_initial_state(CoupledPair.from_points((1.0, 2.0), (0.5, 0.0), 1.0), p)
    assert s.m[0] == pytest.approx(1.5)


# ---------------------------------------------------------------------------
# merge-time law


def test_tail_trivial_values():
    assert stopping_time_tail(1.0, 0.0, P) == 0.0
    assert stopping_time_tail(1.0, TWO_PI, P) == 0.0
    assert stopping_time_tail(0.0, 1.0, P) == 1.0
    with pytest.raises(ParameterError):
        stopping_time_tail(1.0, -0.1, P)
    with pytest.raises(ParameterError):
        stopping_time_tail_bound(0.0, 1.0, P)


@pytest.mark.parametrize("lam,L", [(1.0, 1.0), (0.5, 2.0), (3.0, 0.4)])
@pytest.mark.parametrize("frac", [0.01, 0.2, 0.5, 0.9])
def test_series_and_images_agree(lam, L, frac):
    p = ModelParams(lam, L)
    m0 = frac * TWO_PI * L
    for t in np.array([0.005, 0.02, 0.1, 1.0]) * lam**2 * L**2:
        assert _tail_series(t, m0, p, 1e-14) == pytest.approx(_tail_images(t, m0, p), abs=1e-11)


def test_tail_long_time_is_first_mode():
    t = 12.0
    assert stopping_time_tail(t, math.pi, P) == pytest.approx(4 / math.pi * math.exp(-t / 2), rel=1e-12)


def test_tail_matches_first_passage_mc():
    m, _ = absorbed_bm(math.pi, 2.0, TWO_PI, [1.0], 1e-3, 100_000, np.random.default_rng(10))
    alive = ((m[:, 0] > 0) & (m[:, 0] < TWO_PI)).mean()
    exact = stopping_time_tail(1.0, math.pi, P)
    assert abs(alive - exact) < 3 * math.sqrt(exact * (1 - exact) / 100_000)


@given(st.floats(1e-3, 50), st.floats(0.01, 0.99), st.floats(0.2, 5), st.floats(0.2, 5))
@settings(max_examples=60, deadline=None)
def test_tail_properties(t, frac, lam, L):
    p = ModelParams(lam, L)
    m0 = frac * TWO_PI * L
    v = stopping_time_tail(t, m0, p)
    assert 0.0 <= v <= 1.0
    assert v == pytest.approx(stopping_time_tail(t, TWO_PI * L - m0, p), abs=1e-12)
    assert stopping_time_tail(2 * t, m0, p) <= v + 1e-12
    assert stopping_time_tail_bound(t, m0, p) >= v


# ---------------------------------------------------------------------------
# second moments


def test_rate_regimes():
    assert rate_regime(ModelParams(1.0, 1.0)) == "spatial"
    assert rate_regime(ModelParams(0.1, 1.0)) == "velocity"
    assert rate_regime(ModelParams(0.25 ** (1 / 3), 1.0)) == "critical"


def test_second_moment_bound_shapes():
    lam = 0.25 ** (1 / 3)
    p = ModelParams(lam, 1.0)
    t = np.array([0.0, 1.0, 2.0])
    decay = np.exp(-2 * lam * t)
    np.testing.assert_allclose(second_moment_bound(t, 1.0, 2.0, 3.0, p), decay + 6.0 * (1 + t) * decay)
    t = np.array([0.5, 4.0])
    np.testing.assert_allclose(second_moment_bound(t, 1.0, 2.0, 3.0, P), np.exp(-2 * t) + 6.0 * np.exp(-t / 2))
    with pytest.raises(ParameterError):
        second_moment_bound(1.0, 0.0, 1.0, 0.0, p)


def test_z_ode_solution_satisfies_ode():
    m0, z0 = 2.0, 0.7
    t, eps = 1.3, 1e-4
    f = lambda s: z_second_moment_ode(s, z0, m0, P)  # noqa: E731
    deriv = (f(t + eps) - f(t - eps)) / (2 * eps)
    assert deriv == pytest.approx(-2 * f(t) + 4 * stopping_time_tail(t, m0, P), abs=1e-6)
    assert z_second_moment_ode(2.0, z0, 0.0, P) == pytest.approx(z0 * z0 * math.exp(-4.0))
