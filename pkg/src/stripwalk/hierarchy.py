"""Matrix hierarchy of a strip environment.

For an environment on layers ``E0..E1`` the forward recursion
``zeta_n = (I - R_n - Q_n zeta_{n-1})^{-1} P_n`` is started at ``E0`` and the
backward recursion for ``zeta_minus`` at ``E1``.  Both forget their seeds
geometrically, so values are trusted only inside an analysis window that keeps
a buffer from each edge.  Every limit is certified by running a family of
seeds through the buffer and measuring their spread where the analysis window
begins; a spread above ``tol`` raises :class:`BufferTooSmall`.

Vector norms: column vectors (``v``) use the max norm, which is the norm
induced by the max-row-sum matrix norm.  Row vectors (``l``, ``sigma``) use the
l1 norm, its dual.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .env import Environment, build_environment, ellipticity_floor, norm
from .errors import BufferTooSmall, NonPositiveInput, SingularResolvent

DEFAULT_TOL = 1e-10
DEFAULT_BUFFER = 200


def hilbert_distance(x: np.ndarray, y: np.ndarray) -> float:
    """Hilbert projective distance ``max_{i,j} ln(x_i y_j / (x_j y_i))``."""
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.shape != y.shape:
        raise ValueError("vectors must have equal length")
    if np.any(x <= 0) or np.any(y <= 0):
        raise NonPositiveInput("Hilbert distance needs strictly positive vectors")
    r = np.log(x) - np.log(y)
    return float(r.max() - r.min())


def hilbert_diameter(cols: np.ndarray) -> float:
    """Largest pairwise Hilbert distance among the columns of ``cols``."""
    lg = np.log(cols)
    # d(x, y) = max_i (lx - ly)_i - min_i (lx - ly)_i
    diff = lg[:, :, None] - lg[:, None, :]
    return float((diff.max(axis=0) - diff.min(axis=0)).max())


def contraction_coefficient(A: np.ndarray) -> float:
    """``(1 - delta) / (1 + delta)`` with ``delta = min_{i,j,k} A(i,k) / A(j,k)``."""
    A = np.asarray(A, dtype=float)
    delta = float((A.min(axis=0) / A.max(axis=0)).min())
    return (1.0 - delta) / (1.0 + delta)


@dataclass(frozen=True)
class ConvergenceRecord:
    """Seed-spread certificate of one limit.

    ``increment`` is the spread of the seed family where the analysis window
    starts, ``iterations`` the number of layers the seeds travelled and
    ``rate`` the geometric ratio fitted to the spread sequence.
    """

    iterations: int
    increment: float
    rate: float
    profile: np.ndarray = field(repr=False, default=None)

    def to_dict(self) -> dict[str, Any]:
        return {"iterations": self.iterations, "increment": self.increment, "rate": self.rate}


def fit_rate(profile: np.ndarray, floor: float = 1e-13) -> float:
    """Geometric ratio of a decaying sequence, fitted on its values above ``floor``."""
    y = np.asarray(profile, dtype=float)
    ok = np.flatnonzero(y > floor)
    if len(ok) < 3:
        return 0.0
    stop = ok[-1] + 1
    start = min(ok[0] + 1, stop - 2)
    k = np.arange(start, stop)
    slope = np.polyfit(k, np.log(y[start:stop]), 1)[0]
    return float(math.exp(slope))


@dataclass(frozen=True, eq=False)
class HierarchyData:
    """Per-layer hierarchy, stored over the whole environment window.

    Arrays are indexed by ``n - env.window[0]``.  Forward quantities (``zeta``,
    ``A``, ``alpha``, ``v``, ``sigma``, ``lam``) are certified on
    ``[lo, E1 - 1]``, backward ones (``zeta_minus``, ``A_minus``,
    ``alpha_minus``, ``l``, ``lam_tilde``) on ``[E0 + 1, hi]``, where
    ``(lo, hi)`` is the analysis window.
    """

    env: Environment
    analysis_window: tuple[int, int]
    tol: float
    zeta: np.ndarray
    zeta_minus: np.ndarray
    A: np.ndarray
    alpha: np.ndarray
    A_minus: np.ndarray
    alpha_minus: np.ndarray
    v: np.ndarray
    l: np.ndarray
    sigma: np.ndarray
    lam: np.ndarray
    lam_tilde: np.ndarray
    diagnostics: dict[str, ConvergenceRecord]

    @property
    def m(self) -> int:
        return self.env.width

    @property
    def offset(self) -> int:
        return self.env.window[0]

    def idx(self, n):
        return np.asarray(n) - self.offset

    def layers(self) -> np.ndarray:
        lo, hi = self.analysis_window
        return np.arange(lo, hi + 1)

    def window_slice(self, lo: int | None = None, hi: int | None = None) -> slice:
        a, b = self.analysis_window
        lo = a if lo is None else lo
        hi = b if hi is None else hi
        return slice(lo - self.offset, hi - self.offset + 1)

    def to_dict(self) -> dict[str, Any]:
        sl = self.window_slice()
        out: dict[str, Any] = {"analysis_window": list(self.analysis_window), "tol": self.tol,
                               "diagnostics": {k: v.to_dict() for k, v in self.diagnostics.items()}}
        for name in ("zeta", "zeta_minus", "A", "alpha", "A_minus", "alpha_minus", "v", "l",
                     "sigma", "lam", "lam_tilde"):
            out[name] = getattr(self, name)[sl].tolist()
        return out


def _solve(M: np.ndarray, B: np.ndarray, n: int) -> np.ndarray:
    try:
        return np.linalg.solve(M, B)
    except np.linalg.LinAlgError as exc:
        raise SingularResolvent(f"resolvent singular at layer {n}") from exc


def _seed_family(m: int) -> np.ndarray:
    """Stochastic seeds: uniform, identity and the m rank-one matrices 1 e_j^T."""
    seeds = [np.full((m, m), 1.0 / m), np.eye(m)]
    for j in range(m):
        s = np.zeros((m, m))
        s[:, j] = 1.0
        seeds.append(s)
    return np.array(seeds)


def _spread(batch: np.ndarray) -> float:
    return float(norm(batch - batch[0]).max())


def _zeta_forward(env: Environment) -> tuple[np.ndarray, np.ndarray]:
    """zeta over the env window (seeded at E0) and the seed-spread profile."""
    L, m = len(env), env.width
    eye = np.eye(m)
    zeta = np.empty((L, m, m))
    batch = _seed_family(m)
    zeta[0] = batch[0]
    spread = np.zeros(L)
    spread[0] = _spread(batch)
    for k in range(1, L):
        M = eye - env.R[k] - env.Q[k] @ batch
        batch = _solve(M, np.broadcast_to(env.P[k], batch.shape), env.window[0] + k)
        # rows sum to 1 exactly in exact arithmetic; re-projecting stops rounding
        # from drifting to a non-stochastic fixed point when the walk is transient
        batch /= batch.sum(axis=2, keepdims=True)
        zeta[k] = batch[0]
        spread[k] = _spread(batch)
    return zeta, spread


def _zeta_backward(env: Environment) -> tuple[np.ndarray, np.ndarray]:
    L, m = len(env), env.width
    eye = np.eye(m)
    zm = np.empty((L, m, m))
    batch = _seed_family(m)
    zm[-1] = batch[0]
    spread = np.zeros(L)
    spread[-1] = _spread(batch)
    for k in range(L - 2, -1, -1):
        M = eye - env.R[k] - env.P[k] @ batch
        batch = _solve(M, np.broadcast_to(env.Q[k], batch.shape), env.window[0] + k)
        batch /= batch.sum(axis=2, keepdims=True)
        zm[k] = batch[0]
        spread[k] = _spread(batch)
    return zm, spread


def compute_hierarchy(env: Environment, analysis_window: tuple[int, int] | None = None,
                      tol: float = DEFAULT_TOL, buffer: int = DEFAULT_BUFFER) -> HierarchyData:
    """Hierarchy of ``env`` certified on ``analysis_window``.

    Without an explicit window the analysis window is the environment window
    shrunk by ``buffer`` layers on each side.
    """
    E0, E1 = env.window
    if analysis_window is None:
        analysis_window = (E0 + buffer, E1 - buffer)
    lo, hi = (int(x) for x in analysis_window)
    if not (E0 + 1 < lo <= hi < E1 - 1):
        raise BufferTooSmall(f"analysis window {analysis_window} leaves no buffer inside {env.window}")
    L, m = len(env), env.width
    eye = np.eye(m)
    klo, khi = lo - E0, hi - E0

    zeta, zspread = _zeta_forward(env)
    zm, zmspread = _zeta_backward(env)

    A = np.full((L, m, m), np.nan)
    alpha = np.full((L, m, m), np.nan)
    Am = np.full((L, m, m), np.nan)
    alpham = np.full((L, m, m), np.nan)
    for k in range(1, L - 1):
        n = E0 + k
        M = eye - env.R[k] - env.Q[k] @ zeta[k - 1]
        A[k] = _solve(M, env.Q[k], n)
        # alpha_n = Q_{n+1} M^{-1}  <=>  alpha_n^T = M^{-T} Q_{n+1}^T
        alpha[k] = _solve(M.T, env.Q[k + 1].T, n).T
        Mm = eye - env.R[k] - env.P[k] @ zm[k + 1]
        Am[k] = _solve(Mm, env.P[k], n)
        alpham[k] = _solve(Mm.T, env.P[k - 1].T, n).T

    # v: normalized forward products; the columns of the product from the
    # identity span every admissible seed, so their diameter certifies v.
    v = np.full((L, m), np.nan)
    lam = np.full(L, np.nan)
    vdiam = np.zeros(L)
    cols = eye.copy()
    vcur = np.full(m, 1.0 / m)
    vcur /= norm(vcur)
    v[0] = vcur
    vdiam[0] = np.inf
    for k in range(1, L - 1):
        w = A[k] @ vcur
        lam[k] = norm(w)
        vcur = w / lam[k]
        v[k] = vcur
        cols = A[k] @ cols
        cols /= cols.max(axis=0, keepdims=True)
        vdiam[k] = hilbert_diameter(cols)

    # l: normalized backward products of alpha, rows normalized in l1.
    l = np.full((L, m), np.nan)
    lam_t = np.full(L, np.nan)
    ldiam = np.zeros(L)
    rows = eye.copy()
    lcur = np.full(m, 1.0 / m)
    l[L - 1] = lcur
    ldiam[L - 1] = np.inf
    for k in range(L - 2, 0, -1):
        w = lcur @ alpha[k]
        lam_t[k] = float(w.sum())
        lcur = w / lam_t[k]
        l[k] = lcur
        rows = rows @ alpha[k]
        rows /= rows.sum(axis=1, keepdims=True)
        ldiam[k] = hilbert_diameter(rows.T)

    # sigma: left products of zeta; the row spread of the product certifies it.
    sigma = np.full((L, m), np.nan)
    sspread = np.zeros(L)
    prod = eye.copy()
    scur = np.full(m, 1.0 / m)
    sigma[1] = scur
    sspread[1] = np.inf
    for k in range(2, L):
        scur = scur @ zeta[k - 1]
        scur /= scur.sum()
        sigma[k] = scur
        prod = prod @ zeta[k - 1]
        sspread[k] = float(np.abs(prod - prod[0]).sum(axis=1).max())

    diag = {
        "zeta": ConvergenceRecord(klo, float(zspread[klo]), fit_rate(zspread), zspread),
        "zeta_minus": ConvergenceRecord(L - 1 - khi, float(zmspread[khi]), fit_rate(zmspread[::-1]), zmspread),
        "v": ConvergenceRecord(klo, float(vdiam[klo]), fit_rate(vdiam[1:]), vdiam),
        "l": ConvergenceRecord(L - 1 - khi, float(ldiam[khi]), fit_rate(ldiam[1:-1][::-1]), ldiam),
        "sigma": ConvergenceRecord(klo - 1, float(sspread[klo]), fit_rate(sspread[2:]), sspread),
    }
    bad = {k: r.increment for k, r in diag.items() if not r.increment <= tol}
    if bad:
        raise BufferTooSmall(f"seed spread above tol={tol:g} at the analysis edge: {bad}")
    return HierarchyData(env, (lo, hi), tol, zeta, zm, A, alpha, Am, alpham, v, l, sigma, lam,
                         lam_t, diag)


def compute_hierarchy_auto(spec: dict, analysis_window: tuple[int, int], tol: float = DEFAULT_TOL,
                           buffer: int = DEFAULT_BUFFER, max_buffer: int = 3200) -> HierarchyData:
    """Build the environment from ``spec`` and double the buffer until certified."""
    lo, hi = analysis_window
    while True:
        env = build_environment(spec, (lo - buffer, hi + buffer))
        try:
            return compute_hierarchy(env, analysis_window, tol)
        except BufferTooSmall:
            if 2 * buffer > max_buffer:
                raise
            buffer *= 2


# residuals --------------------------------------------------------------------

def residuals(h: HierarchyData) -> dict[str, float]:
    """Sup-norm residuals of the defining identities over the analysis window."""
    env, m = h.env, h.m
    eye = np.eye(m)
    lo, hi = h.analysis_window
    k = np.arange(lo, hi + 1) - h.offset
    P, Q, R = env.P, env.Q, env.R
    zeta_fp = np.linalg.solve(eye - R[k] - Q[k] @ h.zeta[k - 1], P[k])
    zm_fp = np.linalg.solve(eye - R[k] - P[k] @ h.zeta_minus[k + 1], Q[k])
    return {
        "zeta_fixed_point": float(norm(h.zeta[k] - zeta_fp).max()),
        "zeta_minus_fixed_point": float(norm(h.zeta_minus[k] - zm_fp).max()),
        "zeta_stochastic": float(np.abs(h.zeta[k].sum(axis=2) - 1).max()),
        "zeta_minus_stochastic": float(np.abs(h.zeta_minus[k].sum(axis=2) - 1).max()),
        "alpha_P": float(norm(h.alpha[k] @ P[k] - Q[k + 1] @ h.zeta[k]).max()),
        "A_v": float(np.abs(np.einsum("kij,kj->ki", h.A[k], h.v[k - 1]) - h.lam[k, None] * h.v[k]).max()),
        "l_alpha": float(np.abs(np.einsum("ki,kij->kj", h.l[k + 1], h.alpha[k])
                                - h.lam_tilde[k, None] * h.l[k]).max()),
        "sigma": float(np.abs(np.einsum("ki,kij->kj", h.sigma[k - 1], h.zeta[k - 1]) - h.sigma[k]).max()),
    }


def positivity_check(h: HierarchyData, eps_bar: float | None = None) -> dict[str, float]:
    """Entrywise floor and norm of A over the window against the ellipticity bounds."""
    sl = h.window_slice()
    if eps_bar is None:
        eps_bar = ellipticity_floor(h.env.restrict(h.analysis_window))
    A = h.A[sl]
    return {"eps_bar": eps_bar, "min_entry": float(A.min()), "max_norm": float(norm(A).max()),
            "norm_bound": 1.0 / (h.m * eps_bar),
            "pass": bool(A.min() >= eps_bar and norm(A).max() <= 1.0 / (h.m * eps_bar))}


def contraction_certificate(h: HierarchyData, n_pairs: int = 1000, seed: int = 0,
                            eps_bar: float | None = None) -> dict[str, Any]:
    """Check ``r(Ax, Ay) <= c r(x, y)`` on random positive pairs at every window layer.

    ``c`` uses each matrix's own ratio floor ``delta``; the worst observed
    ratio and the bound with ``delta = m eps_bar^2`` are reported alongside.
    """
    from . import rng

    gen = rng.stream(seed, 14)
    sl = h.window_slice()
    A = h.A[sl]
    worst_ratio = 0.0
    worst_margin = -np.inf
    for Ak in A:
        c = contraction_coefficient(Ak)
        x = np.exp(gen.normal(0.0, 2.0, (n_pairs, h.m)))
        y = np.exp(gen.normal(0.0, 2.0, (n_pairs, h.m)))
        lx, ly = np.log(x), np.log(y)
        d0 = (lx - ly).max(axis=1) - (lx - ly).min(axis=1)
        ax, ay = np.log(x @ Ak.T), np.log(y @ Ak.T)
        d1 = (ax - ay).max(axis=1) - (ax - ay).min(axis=1)
        ok = d0 > 1e-12
        ratio = d1[ok] / d0[ok]
        worst_ratio = max(worst_ratio, float(ratio.max()))
        worst_margin = max(worst_margin, float((ratio - c).max()))
    floor = eps_bar if eps_bar is not None else ellipticity_floor(h.env.restrict(h.analysis_window))
    delta_floor = h.m * floor ** 2
    return {
        "layers": int(len(A)),
        "pairs_per_layer": n_pairs,
        "worst_ratio": worst_ratio,
        "worst_excess_over_c": worst_margin,
        "max_c": float(max(contraction_coefficient(a) for a in A)),
        "c_floor": (1 - delta_floor) / (1 + delta_floor) if delta_floor < 1 else 0.0,
        "v_rate": h.diagnostics["v"].rate,
        "pass": bool(worst_margin <= 1e-12 and h.diagnostics["v"].rate < 1.0),
    }


# potential --------------------------------------------------------------------

@dataclass(frozen=True)
class PotentialReport:
    n: np.ndarray
    U: np.ndarray
    C_P: float
    threshold: float
    bounded_verdict: bool
    C_tilde_P: float

    def to_dict(self) -> dict[str, Any]:
        return {"n": self.n.tolist(), "U": self.U.tolist(), "C_P": self.C_P, "threshold": self.threshold,
                "bounded": self.bounded_verdict, "C_tilde_P": self.C_tilde_P}


def _log_products_forward(A: np.ndarray) -> np.ndarray:
    """``log ||A_k ... A_1||`` for k = 1..len(A), via rescaled products."""
    out = np.empty(len(A))
    M = np.eye(A.shape[1])
    s = 0.0
    for k, Ak in enumerate(A):
        M = Ak @ M
        c = norm(M)
        s += math.log(c)
        M /= c
        out[k] = s
    return out


def potential(h: HierarchyData, threshold: float = 10.0, samples: int = 40) -> PotentialReport:
    """Potential ``U_n`` on the analysis window (which must contain 0)."""
    lo, hi = h.analysis_window
    if not lo <= 0 <= hi:
        raise ValueError("potential needs an analysis window containing layer 0")
    A = h.A
    o = h.offset
    U = np.zeros(hi - lo + 1)
    if hi >= 1:
        U[1 - lo:] = _log_products_forward(A[1 - o:hi + 1 - o])
    if lo <= -1:
        # U_n = -log ||A_0 A_-1 ... A_{n+1}||, products grow on the right
        M = np.eye(h.m)
        s = 0.0
        for n in range(-1, lo - 1, -1):
            M = M @ A[n + 1 - o]
            c = norm(M)
            s += math.log(c)
            M /= c
            U[n - lo] = -s
    C_P = float(np.abs(U).max())
    return PotentialReport(np.arange(lo, hi + 1), U, C_P, threshold, C_P <= threshold,
                           sandwich_constant(h, samples))


def sandwich_constant(h: HierarchyData, samples: int = 40) -> float:
    """Smallest C with ``e^-C ||x|| 1 <= A_n...A_{k+1} x <= e^C ||x|| 1`` on sampled (k, n).

    For non-negative x the bounds reduce to the max row sum (upper) and the
    smallest entry (lower) of the product.
    """
    lo, hi = h.analysis_window
    o = h.offset
    starts = np.unique(np.linspace(lo, hi - 1, samples).astype(int))
    worst = 0.0
    for k in starts:
        M = np.eye(h.m)
        s = 0.0
        for n in range(k + 1, hi + 1):
            M = h.A[n - o] @ M
            c = norm(M)
            s += math.log(c)
            M /= c
            worst = max(worst, s, -(s + math.log(M.min())))
    return float(worst)
