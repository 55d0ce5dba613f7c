import math

import numpy as np
import pytest

from oracles import long_product_direction, naive_A, naive_zeta
from stripwalk.env import Environment, build_environment, default_iid_spec, default_quasiperiodic_spec, srw_spec
from stripwalk.errors import BufferTooSmall, NonPositiveInput
from stripwalk.hierarchy import (
    compute_hierarchy,
    compute_hierarchy_auto,
    contraction_certificate,
    contraction_coefficient,
    hilbert_distance,
    positivity_check,
    potential,
    residuals,
)


def constant_1d(p, q, window=(-300, 300)):
    L = window[1] - window[0] + 1
    return Environment(1, window, np.full((L, 1, 1), p), np.full((L, 1, 1), q), np.zeros((L, 1, 1)))


def test_hilbert_distance_examples():
    assert hilbert_distance(np.ones(3), np.ones(3)) == 0.0
    assert hilbert_distance([1, 2], [2, 1]) == pytest.approx(math.log(4))
    x, y = np.array([1.0, 3.0, 0.5]), np.array([2.0, 1.0, 1.0])
    assert hilbert_distance(7.5 * x, y) == pytest.approx(hilbert_distance(x, y))
    with pytest.raises(NonPositiveInput):
        hilbert_distance([1, 0], [1, 1])


def test_srw_hierarchy_is_trivial():
    h = compute_hierarchy(constant_1d(0.5, 0.5), (-100, 100))
    sl = h.window_slice()
    for arr in (h.zeta, h.A, h.alpha, h.v, h.l, h.lam, h.lam_tilde, h.zeta_minus):
        assert np.allclose(arr[sl], 1.0, atol=1e-12)


def test_biased_constant_hierarchy():
    h = compute_hierarchy(constant_1d(1 / 3, 2 / 3), (-100, 100))
    sl = h.window_slice()
    assert np.allclose(h.zeta[sl], 1.0, atol=1e-12)
    for arr in (h.A, h.lam, h.alpha, h.lam_tilde):
        assert np.allclose(arr[sl], 2.0, atol=1e-10)


def test_residuals_on_quasiperiodic(quasi):
    h, _ = quasi
    res = residuals(h)
    for key, value in res.items():
        assert value <= 1e-10, key


def test_stochasticity(quasi):
    h, _ = quasi
    sl = h.window_slice()
    assert np.abs(h.zeta[sl].sum(axis=2) - 1).max() < 1e-10
    assert np.abs(h.zeta_minus[sl].sum(axis=2) - 1).max() < 1e-10


def test_zeta_matches_naive_oracle(quasi_env, quasi):
    h, _ = quasi
    z = naive_zeta(quasi_env)
    sl = h.window_slice()
    assert np.abs(z[sl] - h.zeta[sl]).max() < 1e-12


def test_v_matches_long_product(quasi_env, quasi):
    h, _ = quasi
    A = naive_A(quasi_env, naive_zeta(quasi_env))
    for n in (-800, -1, 0, 17, 900):
        k = h.idx(n)
        ref = long_product_direction(A, k, 300)
        assert np.abs(ref - h.v[k]).max() < 1e-8


def test_positivity(quasi, iid):
    for h, _ in (quasi, iid):
        chk = positivity_check(h)
        assert chk["pass"]
        assert chk["min_entry"] >= chk["eps_bar"]


def test_buffer_too_small():
    env = build_environment(default_quasiperiodic_spec(), (-105, 105))
    with pytest.raises(BufferTooSmall):
        compute_hierarchy(env, (-100, 100))


def test_auto_buffer_doubles():
    h = compute_hierarchy_auto(default_quasiperiodic_spec(), (-50, 50), buffer=5)
    assert h.env.window[0] < -55
    assert max(residuals(h).values()) < 1e-10


def test_potential_srw_zero(srw):
    h, _ = srw
    pot = potential(h)
    assert pot.C_P == pytest.approx(0.0, abs=1e-12)
    assert pot.bounded_verdict


def test_potential_biased_linear():
    h = compute_hierarchy(constant_1d(1 / 3, 2 / 3), (-100, 100))
    pot = potential(h)
    assert np.allclose(pot.U, pot.n * math.log(2), atol=1e-9)
    assert not pot.bounded_verdict


def test_potential_iid_bounded_and_stable():
    small = compute_hierarchy_auto(default_iid_spec(), (-500, 500), buffer=300)
    big = compute_hierarchy_auto(default_iid_spec(), (-1000, 1000), buffer=300)
    p1, p2 = potential(small), potential(big)
    assert p1.bounded_verdict and p2.bounded_verdict
    assert p2.C_P < 3 * max(p1.C_P, 0.1)


def test_potential_sandwich_on_u(quasi):
    h, harm = quasi
    pot = potential(h)
    u = np.abs(harm.martingale.u_vec[harm.wslice()]).max(axis=1)
    lu = np.log(u)
    assert lu.max() - lu.min() <= 2 * pot.C_tilde_P + 1e-9


def test_contraction_certificate(quasi):
    h, _ = quasi
    cert = contraction_certificate(h, n_pairs=200)
    assert cert["pass"]
    assert cert["worst_ratio"] < 1.0
    assert 0 < cert["v_rate"] < 1.0


def test_contraction_coefficient_bounds():
    A = np.array([[1.0, 2.0], [3.0, 1.0]])
    delta = min(1 / 3, 1 / 2)
    assert contraction_coefficient(A) == pytest.approx((1 - delta) / (1 + delta))
    assert contraction_coefficient(np.ones((3, 3))) == 0.0


def test_hierarchy_to_dict_roundtrips_json(srw):
    import json
    h, _ = srw
    data = json.loads(json.dumps(h.to_dict()))
    assert data["analysis_window"] == [-1000, 1000]
