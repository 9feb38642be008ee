import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kfplab.couplings import CoupledPair
from kfplab.errors import ParameterError, SizeMismatchError
from kfplab.wasserstein import (
    EmpiricalMeasure,
    cost_matrix,
    coupling_costs,
    ground_cost,
    optimal_assignment,
    w2,
    w2_upper_from_coupling,
    w2_with_se,
)


def _cloud(rng, n, L=1.0):
    return EmpiricalMeasure(rng.uniform(0, 2 * math.pi * L, n), rng.normal(size=n))


def test_ground_cost_uses_torus_distance():
    assert ground_cost((0.1, 0.0), (2 * math.pi - 0.1, 1.0), 1.0) == pytest.approx(0.04 + 1.0)


def test_blocked_cost_matrix_matches_dense():
    rng = np.random.default_rng(0)
    a, b = _cloud(rng, 37), _cloud(rng, 37)
    np.testing.assert_array_equal(cost_matrix(a, b, 1.0), cost_matrix(a, b, 1.0, block_rows=5))


@pytest.mark.parametrize("n", [1, 2, 6])
def test_assignment_equals_brute_force(n):
    rng = np.random.default_rng(n)
    for _ in range(10):
        a, b = _cloud(rng, n, 0.7), _cloud(rng, n, 0.7)
        C = cost_matrix(a, b, 0.7)
        best = min(C[np.arange(n), list(p)].mean() for p in itertools.permutations(range(n)))
        perm, costs = optimal_assignment(a, b, 0.7)
        assert sorted(perm) == list(range(n))
        assert costs.mean() == pytest.approx(best, abs=1e-14)
        assert w2(a, b, 0.7) == pytest.approx(math.sqrt(best), abs=1e-14)


@given(st.floats(-3, 3), st.integers(0, 10_000))
@settings(max_examples=25, deadline=None)
def test_velocity_translation_costs_its_length(c, seed):
    a = _cloud(np.random.default_rng(seed), 20)
    b = EmpiricalMeasure(a.x, a.v + c)
    assert w2(a, b, 1.0) == pytest.approx(abs(c), abs=1e-12)


def test_identical_measures_are_at_distance_zero():
    a = _cloud(np.random.default_rng(1), 50)
    assert w2(a, a, 1.0) == 0.0
    shuffled = EmpiricalMeasure(a.x[::-1].copy(), a.v[::-1].copy())
    assert w2(a, shuffled, 1.0) == 0.0


def test_coupling_upper_bounds_optimum():
    rng = np.random.default_rng(2)
    for _ in range(10):
        x1, x2 = rng.uniform(0, 2 * math.pi, (2, 200))
        v1, v2 = rng.normal(size=(2, 200))
        pairs = CoupledPair(x1, v1, x2, v2)
        assert w2_upper_from_coupling(pairs, 1.0) >= w2(EmpiricalMeasure(x1, v1), EmpiricalMeasure(x2, v2), 1.0)


def test_standard_error_is_delta_method():
    rng = np.random.default_rng(3)
    a, b = _cloud(rng, 100), _cloud(rng, 100)
    w, se = w2_with_se(a, b, 1.0)
    _, costs = optimal_assignment(a, b, 1.0)
    assert w == pytest.approx(math.sqrt(costs.mean()))
    assert se == pytest.approx(costs.std(ddof=1) / 10 / (2 * w), rel=1e-6)


def test_errors():
    rng = np.random.default_rng(4)
    with pytest.raises(SizeMismatchError):
        w2(_cloud(rng, 3), _cloud(rng, 4), 1.0)
    with pytest.raises(ParameterError):
        w2(_cloud(rng, 10), _cloud(rng, 10), 1.0, max_n=5)
    with pytest.raises(Exception):
        EmpiricalMeasure(np.zeros(3), np.zeros(2))
    with pytest.raises(Exception):
        coupling_costs(CoupledPair(np.zeros(0), np.zeros(0), np.zeros(0), np.zeros(0)), 1.0)
