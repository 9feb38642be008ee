import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kfplab.errors import DegenerateConditioningError, ParameterError
from kfplab.kernel import (
    ModelParams,
    conditional_a_given_b,
    conditional_variance,
    covariance,
    drift_corrected,
    noise_factor,
    propagate,
    sample_noise,
    sample_transition,
)

mp.mp.dps = 40


def _ito_oracle(t, lam):
    """Ito-isometry integrals of the explicit solution, by quadrature."""
    t, lam = mp.mpf(t), mp.mpf(lam)
    ka = lambda s: (1 - mp.e ** (-lam * (t - s))) / lam  # noqa: E731
    kb = lambda s: mp.e ** (-lam * (t - s))  # noqa: E731
    return (
        float(mp.quad(lambda s: ka(s) ** 2, [0, t])),
        float(mp.quad(lambda s: ka(s) * kb(s), [0, t])),
        float(mp.quad(lambda s: kb(s) ** 2, [0, t])),
    )


@pytest.mark.parametrize("lam", [0.25, 1.0, 4.0])
@pytest.mark.parametrize("t", [1e-6, 1e-3, 0.1, 0.4999, 0.5001, 1.0, 5.0, 30.0])
def test_covariance_matches_ito_isometry(lam, t):
    c = covariance(t, ModelParams(lam, 1.0))
    aa, ab, bb = _ito_oracle(t, lam)
    assert c.s_aa == pytest.approx(aa, rel=1e-12)
    assert c.s_ab == pytest.approx(ab, rel=1e-12)
    assert c.s_bb == pytest.approx(bb, rel=1e-12)


def test_covariance_small_time_asymptotics():
    p = ModelParams(2.0, 1.0)
    t = 1e-9
    c = covariance(t, p)
    assert c.s_aa == pytest.approx(t**3 / 3, rel=1e-6)
    assert c.s_ab == pytest.approx(t**2 / 2, rel=1e-6)
    assert c.s_bb == pytest.approx(t, rel=1e-6)


def test_covariance_at_zero_is_zero():
    c = covariance(0.0, ModelParams())
    assert (c.s_aa, c.s_ab, c.s_bb) == (0.0, 0.0, 0.0)


@given(st.floats(1e-6, 50.0), st.floats(0.1, 10.0))
def test_covariance_is_positive_definite(t, lam):
    c = covariance(t, ModelParams(lam, 1.0))
    assert c.s_aa > 0 and c.s_bb > 0
    assert c.det > 0
    assert conditional_variance(t, ModelParams(lam, 1.0)) > 0


def test_covariance_vectorised():
    p = ModelParams(1.5, 1.0)
    ts = np.array([0.01, 0.3, 2.0])
    c = covariance(ts, p)
    for i, t in enumerate(ts):
        assert c.s_aa[i] == covariance(t, p).s_aa


@pytest.mark.parametrize("t", [1e-4, 0.2, 1.0, 7.0])
def test_conditional_law(t):
    p = ModelParams(1.3, 0.7)
    c = covariance(t, p)
    aa, ab, bb = _ito_oracle(t, 1.3)
    assert conditional_variance(t, p) == pytest.approx(aa - ab * ab / bb, rel=1e-8)
    g = conditional_a_given_b(t, 0.8, p)
    assert g.mean == pytest.approx(c.s_ab / c.s_bb * 0.8)
    assert g.var == conditional_variance(t, p)


def test_conditional_variance_degenerate_at_zero():
    with pytest.raises(DegenerateConditioningError):
        conditional_variance(0.0, ModelParams())


@pytest.mark.parametrize("t", [1e-5, 0.5, 10.0])
def test_noise_factor_reproduces_covariance(t):
    c = covariance(t, ModelParams())
    F = noise_factor(c)
    np.testing.assert_allclose(F @ F.T, np.array([[c.s_bb, c.s_ab], [c.s_ab, c.s_aa]]), rtol=1e-10, atol=1e-300)


def test_sample_noise_moments():
    p = ModelParams(1.0, 1.0)
    a, b = sample_noise(1.0, p, np.random.default_rng(1), 400_000)
    c = covariance(1.0, p)
    n = a.size
    for est, exact, fourth in ((a * a, c.s_aa, 3 * c.s_aa**2), (b * b, c.s_bb, 3 * c.s_bb**2)):
        assert abs(est.mean() - exact) < 4 * math.sqrt((fourth - exact**2) / n)
    se_ab = math.sqrt((c.s_aa * c.s_bb + c.s_ab**2) / n)
    assert abs((a * b).mean() - c.s_ab) < 4 * se_ab


def test_propagate_is_the_explicit_solution():
    p = ModelParams(2.0, 1.0)
    x, v = propagate(1.0, 3.0, 0.5, 0.1, -0.2, p)
    assert v == pytest.approx(math.exp(-1.0) * 3.0 - 0.2)
    assert x == pytest.approx((1.0 + (1 - math.exp(-1.0)) * 3.0 / 2.0 + 0.1) % (2 * math.pi))


def test_sample_transition_wraps_and_is_reproducible():
    p = ModelParams(1.0, 0.5)
    x1, v1 = sample_transition(0.1, 0.0, 2.0, p, np.random.default_rng(5), size=1000)
    x2, v2 = sample_transition(0.1, 0.0, 2.0, p, np.random.default_rng(5), size=1000)
    assert np.array_equal(x1, x2) and np.array_equal(v1, v2)
    assert np.all((x1 >= 0) & (x1 < 2 * math.pi * 0.5))


def test_drift_corrected_coordinate_is_invariant_without_noise():
    p = ModelParams(0.7, 1.0)
    x, v = propagate(0.3, 1.1, 2.0, 0.0, 0.0, p)
    y0 = drift_corrected(0.3, 1.1, p)
    assert math.remainder(drift_corrected(x, v, p) - y0, 2 * math.pi) == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("lam,L", [(0.0, 1.0), (-1.0, 1.0), (1.0, 0.0), (math.nan, 1.0)])
def test_model_params_validation(lam, L):
    with pytest.raises(ParameterError):
        ModelParams(lam, L)


def test_negative_time_rejected():
    with pytest.raises(ParameterError):
        covariance(-1.0, ModelParams())
