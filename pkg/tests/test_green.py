"""Exact Green functions, asymptotic predictions and exit probabilities."""
from __future__ import annotations

import numpy as np
import pytest

from oracles import brute_force_green, dense_exit_law
from conftest import analyse
from stripwalk.env import lazify
from stripwalk.errors import StripWalkError
from stripwalk.green import (
    exit_probability,
    g_kernel,
    green_asymptotic,
    green_compare,
    green_dense,
    green_exact,
    green_prediction_table,
)


@pytest.mark.parametrize("L", [10, 100, 500])
def test_srw_green_at_start_is_L(srw_env, L):
    assert green_exact(srw_env, -L, L, (0, 0)).at(0, 0) == pytest.approx(L, abs=1e-9)


def test_srw_green_small_interval(srw_env):
    table = green_exact(srw_env, -4, 4, (0, 0))
    assert table.at(2, 0) == pytest.approx(2.0, abs=1e-12)
    assert np.allclose(table.values[1:-1, 0], brute_force_green(srw_env, -4, 4, (0, 0))[:, 0], atol=1e-12)


def test_srw_exit_probability(srw, srw_env):
    _, harm = srw
    exact, pred = exit_probability(srw_env, harm, -3, 5, (0, 0))
    assert exact == pytest.approx(0.375, abs=1e-12)
    assert pred == pytest.approx(0.375, abs=1e-12)
    left, lpred = exit_probability(srw_env, harm, -3, 5, (0, 0), side="left")
    assert left == pytest.approx(0.625, abs=1e-12)
    assert lpred == pytest.approx(0.625, abs=1e-12)


@pytest.mark.parametrize("a,b,k", [(-10, 10, 0), (-7, 30, 4), (0, 60, 59)])
def test_srw_gamblers_ruin(srw_env, a, b, k):
    exact, _ = exit_probability(srw_env, None, a, b, (k, 0))
    assert exact == pytest.approx((k - a) / (b - a), abs=1e-10)


@pytest.mark.parametrize("length", [5, 40, 60])
def test_block_solver_matches_dense(quasi_env, iid_env, length):
    for env in (quasi_env, iid_env):
        for start in ((1, 0), (length // 2, 1)):
            exact = green_exact(env, 0, length, start).values
            assert np.allclose(exact, green_dense(env, 0, length, start).values, atol=1e-10, rtol=0)
            assert np.allclose(exact[1:-1], brute_force_green(env, 0, length, start), atol=1e-10, rtol=0)


def test_green_invariants(quasi_env):
    table = green_exact(quasi_env, -30, 30, (3, 1))
    assert np.all(table.values >= 0)
    assert np.all(table.values[0] == 0) and np.all(table.values[-1] == 0)
    # row sum is the expected absorption time, which solves (I - P_int) t = 1
    dense = green_dense(quasi_env, -30, 30, (3, 1))
    assert table.absorption_time == pytest.approx(dense.absorption_time, rel=1e-12)
    assert table.absorption_time > 0


def test_exit_probabilities_sum_to_one(quasi_env):
    left, right = dense_exit_law(quasi_env, -15, 20, (0, 1))
    exact_r, _ = exit_probability(quasi_env, None, -15, 20, (0, 1))
    exact_l, _ = exit_probability(quasi_env, None, -15, 20, (0, 1), side="left")
    assert exact_r == pytest.approx(right.sum(), abs=1e-12)
    assert exact_l == pytest.approx(left.sum(), abs=1e-12)
    assert exact_l + exact_r == pytest.approx(1.0, abs=1e-12)


def test_reflection_symmetry(quasi_env):
    t = green_exact(quasi_env, -20, 25, (4, 0))
    r = green_exact(quasi_env.reflect(), -25, 20, (-4, 0))
    assert np.allclose(t.values[::-1], r.values, atol=1e-12)


def test_monotone_in_interval(quasi_env):
    small = green_exact(quasi_env, -20, 20, (0, 0))
    big = green_exact(quasi_env, -40, 40, (0, 0))
    assert np.all(big.values[20:61] >= small.values - 1e-12)


def test_bad_intervals(srw_env):
    with pytest.raises(ValueError):
        green_exact(srw_env, 0, 10, (0, 0))
    with pytest.raises(ValueError):
        green_exact(srw_env, -5, 5, (0, 3))
    with pytest.raises(ValueError):
        green_exact(srw_env, -5000, 5, (0, 0))


def test_kernel_examples():
    L = 7.0
    assert g_kernel(0, 0, -L, L) == pytest.approx(L)
    assert g_kernel(L, L, 0, 2 * L) == pytest.approx(L)
    assert g_kernel(1.0, 3.0, -2.0, 5.0) == g_kernel(3.0, 1.0, -2.0, 5.0)
    assert g_kernel(5.0, 1.0, -2.0, 5.0) == 0.0


def test_srw_prediction_is_exact(srw, srw_env):
    _, harm = srw
    cmp = green_compare(srw_env, harm, -50, 50, (10, 0))
    assert cmp["sup_error"] < 1e-9
    p = green_asymptotic(harm, -50, 50, (0, 0), (0, 0))
    assert p.value == pytest.approx(50.0, abs=1e-9)
    assert green_asymptotic(harm, -50, 50, (0, 0), (50, 0)).g_scalar == 0.0


def test_quasi_error_does_not_grow(quasi_env, quasi):
    _, harm = quasi
    e1 = green_compare(quasi_env, harm, -100, 100, (0, 0))["sup_error"]
    e2 = green_compare(quasi_env, harm, -200, 200, (0, 0))["sup_error"]
    assert e2 <= 1.5 * e1


def test_quasi_exit_probability_rate(quasi_env, quasi):
    _, harm = quasi
    d = 100
    exact, pred = exit_probability(quasi_env, harm, -d // 2, d // 2, (0, 0))
    assert abs(exact - pred) <= 5 / d


def test_lazified_green_scales(quasi_env, quasi):
    r = 0.4
    lazy_env = lazify(quasi_env, r)
    _, harm = quasi
    _, lazy_harm = analyse(lazy_env)
    g0 = green_exact(quasi_env, -30, 30, (0, 0)).values
    g1 = green_exact(lazy_env, -30, 30, (0, 0)).values
    assert np.allclose(g1, g0 / (1 - r), rtol=1e-10)
    p0 = green_prediction_table(harm, -30, 30, (0, 0))
    p1 = green_prediction_table(lazy_harm, -30, 30, (0, 0))
    assert np.allclose(p1, p0 / (1 - r), rtol=1e-8)


def test_singular_interior_is_a_package_error():
    from stripwalk.errors import SingularInterior
    assert issubclass(SingularInterior, StripWalkError)
