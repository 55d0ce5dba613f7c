"""Seeded simulation of the strip walk.

Each trajectory draws its uniforms from its own Philox stream keyed by
``(master_seed, trajectory index)``, consumed sequentially, so a trajectory is
fully determined by the seed, its index and the environment, whatever the batch
layout.  The inner loop is compiled with numba and samples the successor of
``(n, i)`` by inverse CDF over the 3m successors ordered as
``Q`` lanes, ``R`` lanes, ``P`` lanes.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numba
import numpy as np

from . import rng
from .env import Environment
from .errors import WindowEscape

UNIFORM_BUDGET = 1 << 22  # doubles held in one uniform block


def transition_table(env: Environment) -> np.ndarray:
    """Cumulative successor probabilities, shape ``(layers, m, 3m)``."""
    probs = np.concatenate([env.Q, env.R, env.P], axis=2)
    cum = np.cumsum(probs, axis=2)
    # the last successor with positive mass closes the row at exactly 1 so
    # that u < 1 never lands on a trailing zero-probability successor
    for k, i in np.ndindex(cum.shape[:2]):
        last = np.flatnonzero(probs[k, i] > 0)[-1]
        cum[k, i, last:] = 1.0
    return cum


@dataclass
class TrajectorySpec:
    """What to simulate and what to record.

    ``observable`` is a table of shape ``(len(env), m)`` summed along the path
    into ``H_N = sum_{t < N} h(xi_t)``.  ``marks`` are times at which the site
    is recorded.  ``ladder_scale`` turns on ladder times: ``tau_0 = 0`` and
    ``tau_k`` is the first time after ``tau_{k-1}`` at which the layer moved
    by ``ladder_scale`` from ``X(tau_{k-1})``.
    """

    env: Environment
    start: tuple[int, int]
    horizon: int
    local_time_sites: Sequence[tuple[int, int]] = ()
    ladder_scale: int | None = None
    ladder_max: int = 0
    observable: np.ndarray | None = None
    marks: Sequence[int] = ()
    _cum: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.horizon < 0:
            raise ValueError("horizon must be non-negative")
        lo, hi = self.env.window
        for n, j in [tuple(self.start), *self.local_time_sites]:
            if not (lo <= n <= hi and 0 <= j < self.env.width):
                raise WindowEscape(f"site {(n, j)} outside the environment window {self.env.window}")
        if any(t < 0 or t > self.horizon for t in self.marks):
            raise ValueError("marks must lie in [0, horizon]")
        if self.ladder_scale is not None and self.ladder_max == 0:
            self.ladder_max = 64

    @property
    def cum(self) -> np.ndarray:
        if self._cum is None:
            self._cum = transition_table(self.env)
        return self._cum


@dataclass
class TrajectoryStats:
    endpoint: tuple[int, int]
    marks: np.ndarray
    local_times: np.ndarray
    ladder_times: np.ndarray
    ladder_positions: np.ndarray
    H_N: float
    max_abs_X: int


@dataclass
class EnsembleResult:
    """Per-trajectory records in trajectory order."""

    master_seed: int
    endpoint: np.ndarray  # (n_traj, 2)
    marks: np.ndarray  # (n_traj, n_marks, 2)
    local_times: np.ndarray  # (n_traj, n_sites)
    ladder_count: np.ndarray  # (n_traj,)
    ladder_times: np.ndarray  # (n_traj, ladder_max)
    ladder_positions: np.ndarray
    H: np.ndarray
    max_abs_X: np.ndarray

    @property
    def n_traj(self) -> int:
        return len(self.endpoint)

    @property
    def X(self) -> np.ndarray:
        return self.endpoint[:, 0]

    def trajectory(self, k: int) -> TrajectoryStats:
        c = int(self.ladder_count[k])
        return TrajectoryStats((int(self.endpoint[k, 0]), int(self.endpoint[k, 1])), self.marks[k],
                               self.local_times[k], self.ladder_times[k, :c], self.ladder_positions[k, :c],
                               float(self.H[k]), int(self.max_abs_X[k]))

    def endpoint_histogram(self) -> dict[tuple[int, int], int]:
        sites, counts = np.unique(self.endpoint, axis=0, return_counts=True)
        return {(int(s[0]), int(s[1])): int(c) for s, c in zip(sites, counts)}

    def to_csv(self, path) -> None:
        """Endpoint histogram as ``n, j, count`` rows."""
        lines = ["n,j,count"] + [f"{n},{j},{c}" for (n, j), c in sorted(self.endpoint_histogram().items())]
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")


@numba.njit(cache=True)
def _advance(cum, offset, m, U, count, state, site_index, lt, marks, mark_pos, mark_ptr,
             ladder_scale, ladder_t, ladder_x, ladder_n, ladder_last, h, H, maxabs):
    """Advance every trajectory of the batch by ``count[b]`` steps.

    ``state[b] = (layer, lane, time)``.  Returns ``-1`` or the batch index of
    a trajectory that left the window (its time is left in ``state``).
    """
    n_layers = cum.shape[0]
    nsucc = 3 * m
    last = nsucc - 1
    n_marks = marks.shape[0]
    lmax = ladder_t.shape[1]
    use_lt = site_index.shape[0] > 0
    use_h = h.shape[0] > 0
    flat = cum.reshape(-1)
    for b in range(U.shape[0]):
        n = state[b, 0]
        j = state[b, 1]
        t = state[b, 2]
        top = maxabs[b]
        p = mark_ptr[b]
        next_mark = marks[p] if p < n_marks else -1
        for s in range(count[b]):
            k = n - offset
            if use_h:
                H[b] += h[k, j]
            u = U[b, s]
            base = (k * m + j) * nsucc
            c = 0
            while c < last and u >= flat[base + c]:
                c += 1
            if m == 1:
                n += c - 1
            else:
                n += c // m - 1
                j = c % m
            t += 1
            k = n - offset
            if k < 0 or k >= n_layers:
                state[b, 0] = n
                state[b, 1] = j
                state[b, 2] = t
                maxabs[b] = top
                mark_ptr[b] = p
                return b
            if use_lt:
                idx = site_index[k, j]
                if idx >= 0:
                    lt[b, idx] += 1
            if n > top:
                top = n
            elif -n > top:
                top = -n
            if t == next_mark:
                while p < n_marks and marks[p] == t:
                    mark_pos[b, p, 0] = n
                    mark_pos[b, p, 1] = j
                    p += 1
                next_mark = marks[p] if p < n_marks else -1
            if ladder_scale > 0:
                d = n - ladder_last[b]
                if d == ladder_scale or d == -ladder_scale:
                    c_l = ladder_n[b]
                    if c_l < lmax:
                        ladder_t[b, c_l] = t
                        ladder_x[b, c_l] = n
                    ladder_n[b] = c_l + 1
                    ladder_last[b] = n
        state[b, 0] = n
        state[b, 1] = j
        state[b, 2] = t
        maxabs[b] = top
        mark_ptr[b] = p
    return -1


def run_ensemble(spec: TrajectorySpec, n_traj: int, master_seed: int,
                 first_index: int = 0) -> EnsembleResult:
    """Simulate trajectories ``first_index .. first_index + n_traj - 1``."""
    if n_traj < 1:
        raise ValueError("n_traj must be at least 1")
    env = spec.env
    m = env.width
    offset = env.window[0]
    N = int(spec.horizon)
    cum = spec.cum
    sites = list(spec.local_time_sites)
    site_index = np.full((len(env), m), -1, dtype=np.int64) if sites else np.zeros((0, 0), dtype=np.int64)
    for s_i, (n, j) in enumerate(sites):
        site_index[n - offset, j] = s_i
    marks = np.array(sorted(spec.marks), dtype=np.int64)
    h = np.ascontiguousarray(spec.observable, dtype=float) if spec.observable is not None else np.zeros((0, 0))
    if h.size and h.shape != (len(env), m):
        raise ValueError(f"observable has shape {h.shape}, expected {(len(env), m)}")
    scale = int(spec.ladder_scale or 0)
    lmax = int(spec.ladder_max) if scale else 1

    out_end = np.empty((n_traj, 2), dtype=np.int64)
    out_marks = np.zeros((n_traj, len(marks), 2), dtype=np.int64)
    out_lt = np.zeros((n_traj, len(sites)), dtype=np.int64)
    out_lc = np.zeros(n_traj, dtype=np.int64)
    out_lt_t = np.zeros((n_traj, lmax), dtype=np.int64)
    out_lt_x = np.zeros((n_traj, lmax), dtype=np.int64)
    out_H = np.zeros(n_traj)
    out_max = np.zeros(n_traj, dtype=np.int64)

    chunk = max(1, min(N, UNIFORM_BUDGET)) if N else 1
    batch = max(1, min(n_traj, UNIFORM_BUDGET // chunk))
    U = np.empty((batch, chunk))
    n0, j0 = int(spec.start[0]), int(spec.start[1])
    for b0 in range(0, n_traj, batch):
        B = min(batch, n_traj - b0)
        gens = [rng.stream(master_seed, first_index + b0 + b) for b in range(B)]
        state = np.zeros((B, 3), dtype=np.int64)
        state[:, 0] = n0
        state[:, 1] = j0
        lt = np.zeros((B, len(sites)), dtype=np.int64)
        if sites and site_index[n0 - offset, j0] >= 0:
            lt[:, site_index[n0 - offset, j0]] = 1
        mark_pos = np.zeros((B, len(marks), 2), dtype=np.int64)
        mark_ptr = np.zeros(B, dtype=np.int64)
        while mark_ptr[0] < len(marks) and marks[mark_ptr[0]] == 0:
            mark_pos[:, mark_ptr[0]] = (n0, j0)
            mark_ptr += 1
        ladder_t = np.zeros((B, lmax), dtype=np.int64)
        ladder_x = np.zeros((B, lmax), dtype=np.int64)
        ladder_n = np.zeros(B, dtype=np.int64)
        ladder_last = np.full(B, n0, dtype=np.int64)
        if scale:
            ladder_x[:, 0] = n0
            ladder_n[:] = 1
        H = np.zeros(B)
        maxabs = np.full(B, abs(n0), dtype=np.int64)
        done = 0
        while done < N:
            step = min(chunk, N - done)
            for b in range(B):
                gens[b].random(out=U[b, :step])
            count = np.full(B, step, dtype=np.int64)
            esc = _advance(cum, offset, m, U[:B], count, state, site_index, lt, marks, mark_pos, mark_ptr,
                           scale, ladder_t, ladder_x, ladder_n, ladder_last, h, H, maxabs)
            if esc >= 0:
                raise WindowEscape(f"trajectory {first_index + b0 + esc} left the window at step "
                                   f"{state[esc, 2]}", step=int(state[esc, 2]),
                                   trajectory=int(first_index + b0 + esc))
            done += step
        sl = slice(b0, b0 + B)
        out_end[sl] = state[:, :2]
        out_marks[sl] = mark_pos
        out_lt[sl] = lt
        out_lc[sl] = ladder_n if scale else 0
        out_lt_t[sl] = ladder_t
        out_lt_x[sl] = ladder_x
        out_H[sl] = H
        out_max[sl] = maxabs
    return EnsembleResult(master_seed, out_end, out_marks, out_lt, out_lc, out_lt_t, out_lt_x, out_H, out_max)


def run_trajectory(spec: TrajectorySpec, master_seed: int, index: int = 0) -> TrajectoryStats:
    """Single trajectory ``index`` of the ensemble keyed by ``master_seed``."""
    return run_ensemble(spec, 1, master_seed, first_index=index).trajectory(0)


def reference_path(env: Environment, start: tuple[int, int], horizon: int, master_seed: int,
                   index: int) -> np.ndarray:
    """Plain-Python re-simulation of one trajectory; returns the (horizon+1, 2) site path."""
    cum = transition_table(env)
    m = env.width
    o = env.window[0]
    u = rng.stream(master_seed, index).random(horizon)
    path = np.empty((horizon + 1, 2), dtype=np.int64)
    n, j = start
    path[0] = start
    for t in range(horizon):
        c = int(np.searchsorted(cum[n - o, j], u[t], side="right"))
        c = min(c, 3 * m - 1)
        n, j = n + c // m - 1, c % m
        path[t + 1] = (n, j)
    return path
