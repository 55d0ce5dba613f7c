"""Green functions of the walk killed on two boundary layers.

``G_{a,b}(z; (n, j))`` is the expected number of visits to ``(n, j)`` before
the walk started at ``z`` first enters layer ``a`` or layer ``b``; the visit
at time 0 counts.  For a fixed start the row ``g = e_z (I - P_int)^{-1}``
solves the block-tridiagonal system

    g_n (I - R_n) - g_{n-1} P_{n-1} - g_{n+1} Q_{n+1} = delta_{n,k} e_i,

which is eliminated layer by layer in ``O((b - a) m^3)``.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .env import Environment
from .errors import SingularInterior
from .harmonic import HarmonicData


@dataclass(frozen=True, eq=False)
class GreenTable:
    """Row of the Green function; ``values[n - a]`` holds layer ``n`` (zero on ``a`` and ``b``)."""

    a: int
    b: int
    start: tuple[int, int]
    values: np.ndarray
    solver_stats: dict[str, Any] = field(default_factory=dict)

    def at(self, n: int, j: int) -> float:
        return float(self.values[n - self.a, j])

    @property
    def absorption_time(self) -> float:
        return float(self.values.sum())


@dataclass(frozen=True)
class GreenPrediction:
    g_scalar: float
    value: float
    inputs: dict[str, float]


def _check_interval(env: Environment, a: int, b: int, start: tuple[int, int]) -> None:
    k, i = start
    if not a < k < b:
        raise ValueError(f"start layer {k} not strictly inside ({a}, {b})")
    if not 0 <= i < env.width:
        raise ValueError(f"lane {i} outside 0..{env.width - 1}")
    lo, hi = env.window
    if a < lo or b > hi:
        raise ValueError(f"interval [{a}, {b}] outside environment window {env.window}")


def _block_solve(diag, lower, upper, rhs) -> np.ndarray:
    """Block Thomas algorithm for column systems
    ``lower[t] x[t-1] + diag[t] x[t] + upper[t] x[t+1] = rhs[t]``."""
    T, m = rhs.shape
    Cp = np.empty((T, m, m))
    dp = np.empty((T, m))
    prevC = np.zeros((m, m))
    prevd = np.zeros(m)
    for t in range(T):
        M = diag[t] - lower[t] @ prevC if t else diag[t]
        r = rhs[t] - lower[t] @ prevd if t else rhs[t]
        try:
            lu = np.linalg.solve(M, np.column_stack([upper[t], r]))
        except np.linalg.LinAlgError as exc:
            raise SingularInterior(f"pivot block {t} is singular") from exc
        Cp[t], dp[t] = lu[:, :m], lu[:, m]
        prevC, prevd = Cp[t], dp[t]
    x = np.empty((T, m))
    x[-1] = dp[-1]
    for t in range(T - 2, -1, -1):
        x[t] = dp[t] - Cp[t] @ x[t + 1]
    return x


def green_exact(env: Environment, a: int, b: int, start: tuple[int, int]) -> GreenTable:
    """Expected visits before absorption at layers ``a`` or ``b``."""
    _check_interval(env, a, b, start)
    t0 = time.perf_counter()
    m = env.width
    o = env.window[0]
    layers = np.arange(a + 1, b)
    e = layers - o
    eye = np.eye(m)
    # transposed row system: (I - R_n)^T g_n^T - P_{n-1}^T g_{n-1}^T - Q_{n+1}^T g_{n+1}^T = rhs
    diag = np.swapaxes(eye - env.R[e], 1, 2)
    lower = -np.swapaxes(env.P[e - 1], 1, 2)
    upper = -np.swapaxes(env.Q[e + 1], 1, 2)
    rhs = np.zeros((len(layers), m))
    rhs[start[0] - a - 1, start[1]] = 1.0
    g = _block_solve(diag, lower, upper, rhs)
    if np.any(g < -1e-12) or not np.all(np.isfinite(g)):
        raise SingularInterior("Green solve produced negative or non-finite values")
    values = np.zeros((b - a + 1, m))
    values[1:-1] = np.maximum(g, 0.0)
    stats = {"dimension": int(len(layers) * m), "seconds": time.perf_counter() - t0}
    return GreenTable(a, b, tuple(start), values, stats)


def green_dense(env: Environment, a: int, b: int, start: tuple[int, int]) -> GreenTable:
    """Dense reference solve of the same system (intended for short intervals)."""
    _check_interval(env, a, b, start)
    m = env.width
    o = env.window[0]
    T = b - a - 1
    K = np.zeros((T * m, T * m))
    for t in range(T):
        n = a + 1 + t
        blk = slice(t * m, (t + 1) * m)
        K[blk, blk] = env.R[n - o]
        if t + 1 < T:
            K[blk, (t + 1) * m:(t + 2) * m] = env.P[n - o]
        if t > 0:
            K[blk, (t - 1) * m:t * m] = env.Q[n - o]
    rhs = np.zeros(T * m)
    rhs[(start[0] - a - 1) * m + start[1]] = 1.0
    g = np.linalg.solve((np.eye(T * m) - K).T, rhs)
    values = np.zeros((b - a + 1, m))
    values[1:-1] = g.reshape(T, m)
    return GreenTable(a, b, tuple(start), values, {"dimension": T * m, "dense": True})


def g_kernel(x: float, y: float, a: float, b: float) -> float:
    """``2 (min(x, y) - a)(b - max(x, y)) / (b - a)``, zero outside ``(a, b)``."""
    lo, hi = min(x, y), max(x, y)
    if lo <= a or hi >= b:
        return 0.0
    return 2.0 * (lo - a) * (b - hi) / (b - a)


def green_asymptotic(harm: HarmonicData, a: int, b: int, start: tuple[int, int],
                     target: tuple[int, int]) -> GreenPrediction:
    Mk, Mn, Ma, Mb = (float(harm.M(x)) for x in (start[0], target[0], a, b))
    g = g_kernel(Mk, Mn, Ma, Mb)
    rho = float(harm.rho[harm.idx(target[0]), target[1]])
    return GreenPrediction(g, g * rho, {"M_k": Mk, "M_n": Mn, "M_a": Ma, "M_b": Mb, "rho": rho})


def green_prediction_table(harm: HarmonicData, a: int, b: int, start: tuple[int, int]) -> np.ndarray:
    """Vectorized :func:`green_asymptotic` over all sites of ``[a, b]``."""
    n = np.arange(a, b + 1)
    M = harm.M(n)
    Mk, Ma, Mb = float(harm.M(start[0])), float(harm.M(a)), float(harm.M(b))
    lo = np.minimum(M, Mk)
    hi = np.maximum(M, Mk)
    g = np.where((lo > Ma) & (hi < Mb), 2.0 * (lo - Ma) * (Mb - hi) / (Mb - Ma), 0.0)
    return g[:, None] * harm.rho[harm.idx(n)]


def green_compare(env: Environment, harm: HarmonicData, a: int, b: int,
                  start: tuple[int, int]) -> dict[str, Any]:
    """Sup over interior sites of ``|G_exact - G_predicted|`` and where it occurs."""
    table = green_exact(env, a, b, start)
    pred = green_prediction_table(harm, a, b, start)
    err = np.abs(table.values - pred)[1:-1]
    t, j = np.unravel_index(int(np.argmax(err)), err.shape)
    return {"a": a, "b": b, "start": list(start), "sup_error": float(err[t, j]),
            "argmax": [int(a + 1 + t), int(j)], "G_at_start": table.at(*start),
            "exact": table, "predicted": pred}


def exit_probability(env: Environment, harm: HarmonicData | None, a: int, b: int,
                     start: tuple[int, int], side: str = "right") -> tuple[float, float | None]:
    """Probability of leaving through layer ``b`` (``side="right"``) or ``a``.

    The exact value is ``sum_j G(start, (b-1, j)) (P_{b-1} 1)_j``; the
    prediction is ``(M_k - M_a) / (M_b - M_a)`` for the right side.
    """
    table = green_exact(env, a, b, start)
    o = env.window[0]
    right = float(table.values[b - 1 - a] @ env.P[b - 1 - o].sum(axis=1))
    pred = None
    if harm is not None:
        Mk, Ma, Mb = (float(harm.M(x)) for x in (start[0], a, b))
        pred = (Mk - Ma) / (Mb - Ma)
    if side == "right":
        return right, pred
    if side == "left":
        left = float(table.values[a + 1 - a] @ env.Q[a + 1 - o].sum(axis=1))
        return left, None if pred is None else 1.0 - pred
    raise ValueError(f"side must be 'left' or 'right', not {side!r}")


def green_csv(cmp: dict[str, Any], path) -> None:
    """Write ``n, j, exact, predicted, abs_error`` rows."""
    table: GreenTable = cmp["exact"]
    pred = cmp["predicted"]
    lines = ["n,j,exact,predicted,abs_error"]
    for t in range(table.values.shape[0]):
        for j in range(table.values.shape[1]):
            ex, pr = table.values[t, j], pred[t, j]
            lines.append(f"{table.a + t},{j},{ex!r},{pr!r},{abs(ex - pr)!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
