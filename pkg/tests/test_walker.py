"""Seeded trajectory simulation."""
from __future__ import annotations

import numpy as np
import pytest

from stripwalk import rng
from stripwalk.env import build_environment, srw_spec
from stripwalk.errors import WindowEscape
from stripwalk.walker import TrajectorySpec, reference_path, run_ensemble, run_trajectory, transition_table


def test_zero_horizon(quasi_env):
    spec = TrajectorySpec(quasi_env, (3, 1), 0, local_time_sites=[(3, 1)], marks=[0])
    res = run_ensemble(spec, 5, 1)
    assert np.all(res.endpoint == (3, 1))
    assert np.all(res.local_times == 1)
    assert np.all(res.marks[:, 0] == (3, 1))


def test_srw_parity(srw_env):
    res = run_ensemble(TrajectorySpec(srw_env, (0, 0), 101), 2000, 3)
    assert np.all(res.X % 2 == 1)


def test_one_step_law(quasi_env):
    """One-step successor frequencies within 3 sigma of the kernel row."""
    start = (5, 1)
    n_traj = 40000
    res = run_ensemble(TrajectorySpec(quasi_env, start, 1), n_traj, 9)
    e = quasi_env.index(start[0])
    probs = {}
    for d, mat in ((-1, quasi_env.Q), (0, quasi_env.R), (1, quasi_env.P)):
        for j in range(2):
            probs[(start[0] + d, j)] = mat[e, start[1], j]
    hist = res.endpoint_histogram()
    assert set(hist) <= set(probs)
    for site, p in probs.items():
        freq = hist.get(site, 0) / n_traj
        assert abs(freq - p) <= 3 * np.sqrt(p * (1 - p) / n_traj) + 1e-12


def test_matches_reference_path(quasi_env):
    N = 300
    spec = TrajectorySpec(quasi_env, (0, 0), N, local_time_sites=[(0, 0), (1, 1)], marks=[0, 17, 150, N])
    for idx in (0, 4, 11):
        path = reference_path(quasi_env, (0, 0), N, 21, idx)
        tr = run_trajectory(spec, 21, idx)
        assert tr.endpoint == tuple(path[-1])
        assert np.array_equal(tr.marks, path[[0, 17, 150, N]])
        lt = [int(np.sum((path[:, 0] == n) & (path[:, 1] == j))) for n, j in [(0, 0), (1, 1)]]
        assert tr.local_times.tolist() == lt
        assert tr.max_abs_X == int(np.abs(path[:, 0]).max())


def test_determinism_and_batch_independence(quasi_env):
    spec = TrajectorySpec(quasi_env, (0, 0), 500, marks=[250])
    a = run_ensemble(spec, 50, 77)
    b = run_ensemble(spec, 50, 77)
    assert np.array_equal(a.endpoint, b.endpoint) and np.array_equal(a.marks, b.marks)
    tail = run_ensemble(spec, 20, 77, first_index=30)
    assert np.array_equal(a.endpoint[30:], tail.endpoint)
    assert not np.array_equal(a.endpoint, run_ensemble(spec, 50, 78).endpoint)


def test_streams_are_distinct():
    x = rng.stream(5, 0).random(4)
    y = rng.stream(5, 1).random(4)
    z = rng.stream(6, 0).random(4)
    assert not np.allclose(x, y) and not np.allclose(x, z)
    assert np.array_equal(x, rng.stream(5, 0).random(4))


def test_srw_mean_and_variance(srw_env):
    N, n_traj = 400, 20000
    X = run_ensemble(TrajectorySpec(srw_env, (0, 0), N), n_traj, 5).X.astype(float)
    assert abs(X.mean()) <= 3 * np.sqrt(N / n_traj)
    # var of the sample variance of a nearly Gaussian variable is 2 sigma^4 / n
    assert abs(X.var() - N) <= 3 * N * np.sqrt(2 / n_traj)


def test_ladder_times(srw_env):
    L = 5
    spec = TrajectorySpec(srw_env, (0, 0), 2000, ladder_scale=L, ladder_max=400)
    res = run_ensemble(spec, 400, 8)
    steps = []
    for k in range(res.n_traj):
        tr = res.trajectory(k)
        assert tr.ladder_times[0] == 0 and tr.ladder_positions[0] == 0
        d = np.diff(tr.ladder_positions)
        assert np.all(np.abs(d) == L)
        assert np.all(np.diff(tr.ladder_times) >= L)
        steps.append(d)
    up = np.mean(np.concatenate(steps) > 0)
    n = sum(len(s) for s in steps)
    assert abs(up - 0.5) <= 3 * 0.5 / np.sqrt(n)


def test_local_time_conservation(quasi_env):
    N = 200
    sites = [(n, j) for n in range(-N, N + 1) for j in range(2)]
    res = run_ensemble(TrajectorySpec(quasi_env, (0, 1), N, local_time_sites=sites), 30, 2)
    assert np.all(res.local_times.sum(axis=1) == N + 1)


def test_observable_sum(srw_env):
    """H_N with h = 1 counts the N steps."""
    h = np.ones((len(srw_env), 1))
    res = run_ensemble(TrajectorySpec(srw_env, (0, 0), 123, observable=h), 10, 4)
    assert np.allclose(res.H, 123)


def test_window_escape():
    env = build_environment(srw_spec(), (-5, 5))
    with pytest.raises(WindowEscape) as info:
        run_ensemble(TrajectorySpec(env, (0, 0), 10000), 10, 1)
    assert info.value.step is not None and info.value.trajectory is not None
    with pytest.raises(WindowEscape):
        TrajectorySpec(env, (9, 0), 10)


def test_transition_table_rows_end_at_one(quasi_env):
    cum = transition_table(quasi_env)
    assert np.all(cum[:, :, -1] == 1.0)
    assert np.all(np.diff(cum, axis=2) >= 0)
