import numpy as np
import pytest

from stripwalk.env import (
    Environment,
    LayerTriple,
    build_environment,
    default_iid_spec,
    default_quasiperiodic_spec,
    ellipticity_floor,
    env_distance,
    lazify,
    load_environment,
    norm,
    perturb,
    perturbation_profile,
    srw_spec,
    validate_ellipticity,
)
from stripwalk.errors import ConfigInvalid, NonStochasticSpec, UnknownGeneratorTag, WidthMismatch


def one_d(p, q, window=(-5, 5)):
    L = window[1] - window[0] + 1
    return Environment(1, window, np.full((L, 1, 1), p), np.full((L, 1, 1), q), np.full((L, 1, 1), 1 - p - q))


def test_layer_triple_rejects_negative_and_non_stochastic():
    with pytest.raises(NonStochasticSpec):
        LayerTriple(np.array([[0.6]]), np.array([[0.6]]), np.array([[-0.2]])).check()
    with pytest.raises(NonStochasticSpec):
        LayerTriple(np.array([[0.5]]), np.array([[0.4]]), np.array([[0.0]])).check()


@pytest.mark.parametrize("spec", [srw_spec(), default_quasiperiodic_spec(), default_iid_spec()])
def test_generated_layers_are_stochastic_and_deterministic(spec):
    a = build_environment(spec, (-60, 60))
    b = build_environment(spec, (-60, 60))
    assert a.identical(b)
    for M in (a.P, a.Q, a.R):
        assert M.min() >= 0
    rows = (a.P + a.Q + a.R).sum(axis=2)
    assert np.max(np.abs(rows - 1)) <= 1e-12


def test_sub_window_reproduces_layers():
    spec = default_iid_spec()
    big = build_environment(spec, (-50, 50))
    small = build_environment(spec, (10, 20))
    assert small.identical(big.restrict((10, 20)))


def test_zero_perturbation_is_srw():
    env = build_environment({"kind": "perturbed-srw", "K": 0.3, "kappa": 2, "rule": "zero"}, (-100, 100))
    assert np.all(env.P == 0.5) and np.all(env.Q == 0.5) and np.all(env.R == 0.0)


def test_single_site_override():
    env = build_environment({**srw_spec(), "sites": {"0": -0.1}}, (-10, 10))
    assert env.layer(0).P[0, 0] == pytest.approx(0.6)
    assert env.layer(0).Q[0, 0] == pytest.approx(0.4)
    others = [n for n in env.layers if n != 0]
    assert all(env.layer(n).P[0, 0] == 0.5 for n in others)


def test_iid_embedded_jump_laws_have_zero_drift():
    env = build_environment(default_iid_spec(), (-50, 50))
    m = env.width
    lanes = np.arange(m)
    # displacement of a jump from lane i to lane j across dl layers is dl * m + j - i
    drift = (np.einsum("kij,j->ki", env.P, lanes + m) + np.einsum("kij,j->ki", env.R, lanes)
             + np.einsum("kij,j->ki", env.Q, lanes - m)) - lanes
    assert np.max(np.abs(drift)) < 1e-12


def test_unknown_kind_and_width_mismatch():
    with pytest.raises(UnknownGeneratorTag):
        build_environment({"kind": "nope"}, (-3, 3))
    with pytest.raises(WidthMismatch):
        build_environment(srw_spec(), (-3, 3), width=2)
    with pytest.raises(ConfigInvalid):
        build_environment(srw_spec(), (3, -3))


def test_kappa_at_most_one_rejected():
    with pytest.raises(NonStochasticSpec):
        build_environment({"kind": "perturbed-srw", "K": 0.1, "kappa": 1.0, "rule": "odd"}, (-3, 3))


def test_ellipticity_srw_passes():
    rep = validate_ellipticity(build_environment(srw_spec(), (-20, 20)), 0.4, 1)
    assert rep.passed and rep.violations == []


def test_ellipticity_biased_fails_on_q_bound():
    rep = validate_ellipticity(one_d(0.99, 0.01), 0.05, 1)
    assert not rep.passed
    assert {v[1] for v in rep.violations} == {"Q_exit"}


def test_iid_floor_is_sharp():
    env = build_environment(default_iid_spec(), (-50, 50))
    floor = ellipticity_floor(env)
    assert validate_ellipticity(env, floor, 1).passed
    assert not validate_ellipticity(env, floor * 1.001, 1).passed


def test_quasiperiodic_floor():
    # frozen from the default golden-mean spec
    env = build_environment(default_quasiperiodic_spec(), (-1000, 1000))
    assert ellipticity_floor(env) == pytest.approx(0.1327, abs=1e-4)


def test_distance_examples():
    srw = build_environment(srw_spec(), (-10, 10))
    assert env_distance(srw, srw, 8) == 0.0
    pert = build_environment({**srw_spec(), "sites": {"0": -0.1}}, (-10, 10))
    assert env_distance(srw, pert, 8) == pytest.approx(0.2)
    a = build_environment({**srw_spec(), "sites": {"0": 0.05}}, (-10, 10))
    b = build_environment({**srw_spec(), "sites": {"0": -0.05}}, (-10, 10))
    assert env_distance(a, b, 8) == pytest.approx(0.2)


def test_lazify():
    env = lazify(build_environment(srw_spec(), (-5, 5)), 0.5)
    assert np.allclose(env.P, 0.25) and np.allclose(env.Q, 0.25) and np.allclose(env.R, 0.5)
    q = build_environment(default_quasiperiodic_spec(), (-40, 40))
    twice = lazify(lazify(q, 0.3), 0.2)
    once = lazify(q, 1 - 0.7 * 0.8)
    for k in "PQR":
        assert np.allclose(getattr(twice, k), getattr(once, k), atol=1e-15)
    with pytest.raises(ConfigInvalid):
        lazify(q, 1.0)


def test_lazified_quasiperiodic_keeps_k0():
    q = build_environment(default_quasiperiodic_spec(), (-200, 200))
    lq = lazify(q, 0.5)
    assert validate_ellipticity(lq, 0.5 * ellipticity_floor(lq), 1).passed


def test_perturb_zero_magnitude_is_identity():
    q = build_environment(default_quasiperiodic_spec(), (-40, 40))
    out = perturb(q, 0.0, 2.0)
    assert out.identical(q)


def test_perturb_site_rule_supported_at_origin():
    q = build_environment(default_quasiperiodic_spec(), (-40, 40))
    for decay in (1.5, 3.0, 8.0):
        out = perturb(q, 0.1, decay, "site")
        dev = out.metadata["deviation"]
        assert np.count_nonzero(dev) == 1 and dev[q.index(0)] > 0


def test_perturbation_bound_at_ten():
    n = np.arange(-20, 21)
    a = perturbation_profile({"K": 0.1, "kappa": 2.0, "rule": "positive"}, n)
    assert a[n == 10][0] <= 0.1 / 101 + 1e-18
    env = perturb(build_environment(srw_spec(), (-20, 20)), 0.1, 2.0, "right")
    assert env.metadata["deviation"][env.index(10)] <= 0.1 / 101 * 0.5 + 1e-15


def test_reflect_swaps_p_and_q():
    q = build_environment(default_quasiperiodic_spec(), (-10, 12))
    r = q.reflect()
    assert r.window == (-12, 10)
    assert np.array_equal(r.layer(3).P, q.layer(-3).Q)
    assert r.reflect().identical(q)


def test_save_load_roundtrip(tmp_path):
    q = build_environment(default_quasiperiodic_spec(), (-10, 10))
    path = tmp_path / "env.json"
    q.save(path)
    assert load_environment(path).identical(q)
    again = build_environment({"kind": "explicit", "path": str(path)}, (-5, 5))
    assert again.identical(q.restrict((-5, 5)))


def test_norm_conventions():
    assert norm(np.array([[1.0, -2.0], [0.5, 0.5]])) == 3.0
    assert norm(np.array([1.0, -4.0])) == 4.0
