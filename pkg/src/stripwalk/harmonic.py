"""Harmonic coordinate, invariant measure and derived averages.

All per-layer arrays live on the solve range ``[E0 + 1, E1 - 2]`` of the
environment window ``[E0, E1]``.  The recursions used below satisfy the
martingale and invariant-measure equations exactly on the whole range; the
buffer only serves to wash out the boundary transients, so every reported
check is restricted to the analysis window of the hierarchy.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .env import Environment, norm
from .errors import (
    DegenerateMartingale,
    InsufficientWindow,
    NonConvergent,
    NormalizationDegenerate,
    TailNotCauchy,
    TruncationInsufficient,
    UnboundedIncrements,
)
from .hierarchy import HierarchyData


@dataclass(frozen=True, eq=False)
class Layered:
    """Base for objects holding arrays indexed by ``n - first``."""

    first: int
    window: tuple[int, int]

    def idx(self, n):
        return np.asarray(n) - self.first

    def wslice(self, lo: int | None = None, hi: int | None = None) -> slice:
        a, b = self.window
        lo = a if lo is None else lo
        hi = b if hi is None else hi
        return slice(lo - self.first, hi - self.first + 1)


@dataclass(frozen=True, eq=False)
class MartingaleSolution(Layered):
    m_vec: np.ndarray
    u_vec: np.ndarray
    M_sum: np.ndarray
    slope: float
    scale: float
    shift: float
    increment_bound: float
    window_error: float


@dataclass(frozen=True, eq=False)
class InvariantMeasure(Layered):
    rho: np.ndarray
    normalization_constant: float
    residual_sup: float


@dataclass(frozen=True, eq=False)
class HarmonicData(Layered):
    hier: HierarchyData
    martingale: MartingaleSolution
    invariant: InvariantMeasure
    q_vec: np.ndarray
    beta: np.ndarray
    beta_tilde: np.ndarray
    a: float
    b: float
    D: float
    one_sided: dict[str, float]
    current: float
    diagnostics: dict[str, Any] = field(default_factory=dict)

    @property
    def m(self) -> int:
        return self.hier.m

    @property
    def env(self) -> Environment:
        return self.hier.env

    @property
    def rho(self) -> np.ndarray:
        return self.invariant.rho

    @property
    def m_vec(self) -> np.ndarray:
        return self.martingale.m_vec

    def M(self, n) -> np.ndarray | float:
        return self.martingale.M_sum[self.idx(n)]

    def summary(self) -> dict[str, Any]:
        return {"a": self.a, "b": self.b, "D": self.D, "current": self.current, **self.one_sided,
                "slope": self.martingale.slope, "scale": self.martingale.scale,
                "increment_bound": self.martingale.increment_bound, **self.diagnostics}

    def to_csv(self, path) -> None:
        """Columns: n, component, m, rho, q, beta, beta_tilde."""
        sl = self.wslice()
        ns = np.arange(*self.window)
        ns = np.append(ns, self.window[1])
        lines = ["n,j,m,rho,q,beta,beta_tilde"]
        for k, n in zip(range(sl.start, sl.stop), ns):
            for j in range(self.m):
                lines.append(f"{n},{j},{self.m_vec[k, j]!r},{self.rho[k, j]!r},{self.q_vec[k, j]!r},"
                             f"{self.beta[k]!r},{self.beta_tilde[k]!r}")
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")


# beta sequences ---------------------------------------------------------------

def _anchored_cumprod(lam: np.ndarray, first: int) -> np.ndarray:
    """``beta`` with ``beta_0 = 1`` and ``beta_{n+1} = lam_n beta_n``, computed in log space.

    ``lam[k]`` is the factor at layer ``first + k``; the result has the same
    indexing and ``len(lam)`` entries.
    """
    logs = np.log(lam)
    cum = np.concatenate([[0.0], np.cumsum(logs[:-1])])  # log(beta_n / beta_first)
    k0 = -first
    if not 0 <= k0 < len(lam):
        raise InsufficientWindow("beta anchoring needs layer 0 inside the solve range")
    return np.exp(cum - cum[k0])


def solve_range(h: HierarchyData) -> tuple[int, int]:
    E0, E1 = h.env.window
    return E0 + 1, E1 - 2


def betas(h: HierarchyData) -> tuple[np.ndarray, np.ndarray]:
    """``beta``, ``beta_tilde`` on the solve range, anchored at ``beta_0 = 1``."""
    s0, s1 = solve_range(h)
    sl = slice(s0 - h.offset, s1 - h.offset + 1)
    return _anchored_cumprod(h.lam[sl], s0), _anchored_cumprod(h.lam_tilde[sl], s0)


# martingale -------------------------------------------------------------------

def build_u(h: HierarchyData) -> np.ndarray:
    """Positive solution of ``u_n = A_n u_{n-1}`` with ``u_0 = v_0`` on the solve range.

    Since ``A_n v_{n-1} = lam_n v_n`` this is ``u_n = beta_{n+1} v_n / lam_0``.
    """
    s0, s1 = solve_range(h)
    o = h.offset
    # beta up to s1 + 1 needs lam on [s0, s1]
    beta_ext = _anchored_cumprod(h.lam[s0 - o:s1 - o + 2], s0)
    u = beta_ext[1:, None] * h.v[s0 - o:s1 - o + 1] / h.lam[-o]
    if not np.all(np.isfinite(u)) or u.min() <= 0 or u.min() < 1e-250:
        raise DegenerateMartingale("u collapses or overflows; the potential is not bounded on this window")
    return u


def _fit_slope(n: np.ndarray, y: np.ndarray) -> float:
    return float(np.polyfit(n.astype(float), y, 1)[0])


def central_fraction(window: tuple[int, int], frac: float = 0.8) -> tuple[int, int]:
    lo, hi = window
    cut = int(round((hi - lo) * (1.0 - frac) / 2.0))
    return lo + cut, hi - cut


def solve_martingale(h: HierarchyData, u: np.ndarray, scale: float | None = None,
                     increment_threshold: float = 1e3) -> MartingaleSolution:
    """Backward recursion ``m_n = u_n + zeta_n m_{n+1}`` from ``m = 0`` past the right edge.

    The raw solution is rescaled so that the least-squares slope of
    ``M_n = sum_j m_n(j)`` over the central 80% of the analysis window is
    ``m`` (or by the given ``scale``), then shifted so that ``m_0(1) = 0``.
    """
    s0, s1 = solve_range(h)
    o = h.offset
    m = h.m
    L = s1 - s0 + 1
    raw = np.empty((L, m))
    nxt = np.zeros(m)
    for k in range(L - 1, -1, -1):
        nxt = u[k] + h.zeta[s0 + k - o] @ nxt
        raw[k] = nxt
    lo, hi = h.analysis_window
    c0, c1 = central_fraction((lo, hi))
    ns = np.arange(c0, c1 + 1)
    raw_slope = _fit_slope(ns, raw[ns - s0].sum(axis=1))
    if scale is None:
        if not np.isfinite(raw_slope) or abs(raw_slope) < 1e-300:
            raise DegenerateMartingale("martingale sum has zero slope")
        scale = m / raw_slope
    anchor = 0 if lo <= 0 <= hi else lo
    shift = -scale * raw[anchor - s0, 0]
    mv = scale * raw + shift
    us = scale * u
    Msum = mv.sum(axis=1)
    wl = slice(lo - s0, hi - s0 + 1)
    w = mv[wl]
    # |n' - n''| <= 1 covers same-layer and neighbouring-layer pairs
    inc = max(float((w.max(axis=1) - w.min(axis=1)).max()),
              float(np.abs(w[1:, :, None] - w[:-1, None, :]).max()))
    if not np.isfinite(inc) or inc > increment_threshold:
        raise UnboundedIncrements(f"martingale increments reach {inc:g}")
    werr = abs(Msum[hi - s0] - Msum[lo - s0] - m * (hi - lo)) / (hi - lo)
    return MartingaleSolution(s0, (lo, hi), mv, us, Msum, _fit_slope(ns, Msum[ns - s0]),
                              float(scale), float(shift), inc, float(werr))


def martingale_residual(h: HierarchyData, mart: MartingaleSolution) -> dict[str, float]:
    env = h.env
    lo, hi = mart.window
    n = np.arange(lo, hi + 1)
    k = n - mart.first
    e = n - h.offset
    mv = mart.m_vec
    lhs = mv[k]
    rhs = (np.einsum("kij,kj->ki", env.P[e], mv[k + 1]) + np.einsum("kij,kj->ki", env.R[e], mv[k])
           + np.einsum("kij,kj->ki", env.Q[e], mv[k - 1]))
    scale = max(1.0, float(np.abs(mv[k]).max()))
    u_def = mv[k] - np.einsum("kij,kj->ki", h.zeta[e], mv[k + 1]) - mart.u_vec[k]
    u_rec = mart.u_vec[k] - np.einsum("kij,kj->ki", h.A[e], mart.u_vec[k - 1])
    return {"mart_eq": float(np.abs(lhs - rhs).max()),
            "mart_eq_relative": float(np.abs(lhs - rhs).max() / scale),
            "u_definition": float(np.abs(u_def).max()),
            "u_recursion": float(np.abs(u_rec).max())}


# invariant measure ------------------------------------------------------------

def solve_invariant(h: HierarchyData, mart: MartingaleSolution) -> InvariantMeasure:
    """``rho_n = rho_{n+1} alpha_n`` from a uniform row, normalized so that
    ``rho_n P_n (m_{n+1} - zeta^-_{n+1} m_n) = 1/(2m)`` at the window centre."""
    s0, s1 = solve_range(h)
    o = h.offset
    m = h.m
    L = s1 - s0 + 1
    rho = np.empty((L, m))
    cur = np.full(m, 1.0 / m) @ h.alpha[s1 - o]
    rho[L - 1] = cur
    for k in range(L - 2, -1, -1):
        cur = cur @ h.alpha[s0 + k - o]
        rho[k] = cur
    if not np.all(np.isfinite(rho)) or rho.min() <= 0:
        raise NormalizationDegenerate("invariant measure degenerates on the solve range")
    lo, hi = h.analysis_window
    nc = (lo + hi) // 2
    kc = nc - s0
    flux = rho[kc] @ h.env.P[nc - o] @ (mart.m_vec[kc + 1] - h.zeta_minus[nc + 1 - o] @ mart.m_vec[kc])
    if not np.isfinite(flux) or abs(flux) < 1e-300:
        raise NormalizationDegenerate("current vanishes; the martingale is trivial")
    const = 1.0 / (2 * m * flux)
    rho = rho * const
    if rho.min() <= 0:
        raise NormalizationDegenerate("normalization flips the sign of rho")
    inv = InvariantMeasure(s0, (lo, hi), rho, float(const), 0.0)
    res = invariant_residual(h, inv)
    return InvariantMeasure(s0, (lo, hi), rho, float(const), res["rho_eq"])


def invariant_residual(h: HierarchyData, inv: InvariantMeasure) -> dict[str, float]:
    env = h.env
    lo, hi = inv.window
    n = np.arange(lo, hi + 1)
    k = n - inv.first
    e = n - h.offset
    r = inv.rho
    rhs = (np.einsum("ki,kij->kj", r[k - 1], env.P[e - 1]) + np.einsum("ki,kij->kj", r[k], env.R[e])
           + np.einsum("ki,kij->kj", r[k + 1], env.Q[e + 1]))
    alpha_rel = r[k] - np.einsum("ki,kij->kj", r[k + 1], h.alpha[e])
    alpha_minus_rel = r[k + 1] - np.einsum("ki,kij->kj", r[k], h.alpha_minus[e + 1])
    return {"rho_eq": float(np.abs(r[k] - rhs).max()),
            "rho_alpha": float(np.abs(alpha_rel).max()),
            "rho_alpha_minus": float(np.abs(alpha_minus_rel).max())}


def current(h: HierarchyData, mart: MartingaleSolution, inv: InvariantMeasure) -> tuple[np.ndarray, np.ndarray]:
    """Per-layer ``c_n = rho_{n+1} Q_{n+1} (m_n - zeta_n m_{n+1})`` and
    ``c^-_n = rho_n P_n (m_{n+1} - zeta^-_{n+1} m_n)`` over the window."""
    env = h.env
    lo, hi = mart.window
    n = np.arange(lo, hi + 1)
    k = n - mart.first
    e = n - h.offset
    mv, r = mart.m_vec, inv.rho
    u = mv[k] - np.einsum("kij,kj->ki", h.zeta[e], mv[k + 1])
    c = np.einsum("ki,kij,kj->k", r[k + 1], env.Q[e + 1], u)
    w = mv[k + 1] - np.einsum("kij,kj->ki", h.zeta_minus[e + 1], mv[k])
    cm = np.einsum("ki,kij,kj->k", r[k], env.P[e], w)
    return c, cm


def quadratic_variation(env: Environment, mart: MartingaleSolution) -> np.ndarray:
    """``q_n(i)``: conditional mean of the squared one-step martingale increment.

    Entries at the first and last layer of the solve range are NaN.
    """
    mv = mart.m_vec
    L, m = mv.shape
    q = np.full((L, m), np.nan)
    e = np.arange(1, L - 1) + mart.first - env.window[0]
    here = mv[1:-1, :, None]
    q[1:-1] = (np.einsum("kij,kij->ki", env.P[e], (mv[2:, None, :] - here) ** 2)
               + np.einsum("kij,kij->ki", env.R[e], (mv[1:-1, None, :] - here) ** 2)
               + np.einsum("kij,kij->ki", env.Q[e], (mv[:-2, None, :] - here) ** 2))
    return q


def averages(rho: np.ndarray, q: np.ndarray, M_sum: np.ndarray, first: int, window: tuple[int, int],
             m: int, threshold: float = 0.05) -> dict[str, float]:
    """Occupation and quadratic-variation averages over ``window``.

    ``a``, ``b`` average over the whole window; the ``-``/``+`` variants over
    ``n < 0`` and ``n >= 0``; ``mu_pm`` are the one-sided slopes of ``M_n / m``.
    """
    lo, hi = window
    if not lo < 0 < hi:
        raise InsufficientWindow("averages need a window straddling layer 0")
    n = np.arange(lo, hi + 1)
    occ = rho[n - first].sum(axis=1)
    qv = np.einsum("ki,ki->k", rho[n - first], q[n - first])
    a, b = occ.mean(), qv.mean()
    half = (n >= lo // 2) & (n <= hi // 2)
    a_half, b_half = occ[half].mean(), qv[half].mean()
    conv = max(abs(a_half - a) / a, abs(b_half - b) / b)
    if conv > threshold:
        raise NonConvergent(f"half-window averages differ by {conv:.3g} (relative)")
    neg, pos = n < 0, n >= 0
    out = {"a": float(a), "b": float(b), "D": float(b / a),
           "a_minus": float(occ[neg].mean()), "a_plus": float(occ[pos].mean()),
           "b_minus": float(qv[neg].mean()), "b_plus": float(qv[pos].mean()),
           "mu_minus": _fit_slope(n[n <= 0], M_sum[n[n <= 0] - first]) / m,
           "mu_plus": _fit_slope(n[pos], M_sum[n[pos] - first]) / m,
           "half_window_discrepancy": float(conv)}
    out["D_minus"] = out["b_minus"] / out["a_minus"]
    out["D_plus"] = out["b_plus"] / out["a_plus"]
    return out


def solve_harmonic(h: HierarchyData, scale: float | None = None, avg_threshold: float = 0.05,
                   increment_threshold: float = 1e3) -> HarmonicData:
    """Full pipeline: u, martingale, invariant measure, quadratic variation, averages."""
    u = build_u(h)
    mart = solve_martingale(h, u, scale, increment_threshold)
    inv = solve_invariant(h, mart)
    q = quadratic_variation(h.env, mart)
    beta, beta_t = betas(h)
    av = averages(inv.rho, q, mart.M_sum, mart.first, mart.window, h.m, avg_threshold)
    c, cm = current(h, mart, inv)
    diag = {"current_spread": float(c.max() - c.min()), "current_minus_spread": float(cm.max() - cm.min()),
            **martingale_residual(h, mart), **invariant_residual(h, inv)}
    one_sided = {k: v for k, v in av.items() if k not in ("a", "b", "D")}
    return HarmonicData(mart.first, mart.window, h, mart, inv, q, beta, beta_t, av["a"], av["b"], av["D"],
                        one_sided, float(np.median(c)), diag)


def solve_perturbed(base: HarmonicData, pert: HierarchyData, **kw) -> HarmonicData:
    """Harmonic data of a perturbed environment normalized consistently with ``base``.

    The raw perturbed ``u`` is ``beta-bar_{n+1} v-bar_n / lam-bar_0``; scaling
    it by ``s lam-bar_0 / lam_0`` (``s`` the base scale) makes both solutions
    equal to ``s beta_{n+1} v_n / lam_0`` with the common anchoring
    ``beta_0 = beta-bar_0 = 1``, so far from the perturbation the perturbed
    martingale grows like ``beta_pm`` times the base one.
    """
    hb = base.hier
    lam0 = hb.lam[-hb.offset]
    lam0_bar = pert.lam[-pert.offset]
    return solve_harmonic(pert, scale=base.martingale.scale * lam0_bar / lam0, **kw)


# skew parameters --------------------------------------------------------------

@dataclass(frozen=True)
class SkewParams:
    beta_plus: float
    beta_minus: float
    theta: float
    gamma: float
    D_limit: float
    p_formula: float
    p_upsilon: float | None
    p_complement: float
    p_par_skew: float
    upsilon: float | None
    tail_identities: dict[str, float]
    tail_fluctuation: dict[str, float]
    p_empirical_slot: float | None = None

    def candidates(self) -> dict[str, float]:
        """Both orientations of the skewness parameter."""
        return {"beta_plus_ratio": self.p_formula, "beta_minus_ratio": self.p_complement}

    def to_dict(self) -> dict[str, Any]:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def tail_limit(ratio: np.ndarray, tol: float) -> tuple[float, float]:
    fluct = float(ratio.max() - ratio.min())
    if fluct > tol:
        raise TailNotCauchy(f"tail ratio fluctuates by {fluct:.3g} > {tol:g}")
    return float(ratio.mean()), fluct


def beta_and_skew(base: HarmonicData, pert: HarmonicData, cauchy_tol: float = 1e-3) -> SkewParams:
    lo, hi = base.window
    if pert.window != base.window or pert.m != base.m:
        raise InsufficientWindow("base and perturbed data must share width and window")
    n = np.arange(lo, hi + 1)
    ratio = pert.beta[n - pert.first] / base.beta[n - base.first]
    cut_lo = lo + int(0.75 * (0 - lo))
    cut_hi = int(0.75 * hi)
    beta_minus, fm = tail_limit(ratio[n <= cut_lo], cauchy_tol)
    beta_plus, fp = tail_limit(ratio[n >= cut_hi], cauchy_tol)
    os_ = pert.one_sided
    theta = os_["mu_minus"] / os_["mu_plus"]
    gamma = os_["D_minus"] / os_["D_plus"]
    p = beta_plus / (beta_plus + beta_minus)
    ups = p_ups = None
    if base.m == 1:
        e0 = base.hier.offset
        e1 = pert.hier.offset
        p_b, q_b = base.env.P[n - e0, 0, 0], base.env.Q[n - e0, 0, 0]
        p_p, q_p = pert.env.P[n - e1, 0, 0], pert.env.Q[n - e1, 0, 0]
        ups = float(np.exp(np.sum(np.log(q_p * p_b) - np.log(p_p * q_b))))
        p_ups = ups / (ups + 1.0)
    tail_identities = {
        "mu_plus": os_["mu_plus"], "mu_minus": os_["mu_minus"],
        "a_plus": os_["a_plus"], "a_over_beta_plus": base.a / beta_plus,
        "a_minus": os_["a_minus"], "a_over_beta_minus": base.a / beta_minus,
        "b_plus": os_["b_plus"], "b_times_beta_plus": base.b * beta_plus,
        "b_minus": os_["b_minus"], "b_times_beta_minus": base.b * beta_minus,
    }
    tail_identities["max_relative_error"] = max(
        abs(os_["mu_plus"] - beta_plus) / beta_plus, abs(os_["mu_minus"] - beta_minus) / beta_minus,
        abs(os_["a_plus"] - base.a / beta_plus) / os_["a_plus"],
        abs(os_["a_minus"] - base.a / beta_minus) / os_["a_minus"],
        abs(os_["b_plus"] - base.b * beta_plus) / os_["b_plus"],
        abs(os_["b_minus"] - base.b * beta_minus) / os_["b_minus"])
    return SkewParams(beta_plus, beta_minus, theta, gamma, os_["D_plus"] / os_["mu_plus"] ** 2, p, p_ups,
                      1.0 - p, 1.0 / (theta + 1.0), ups, tail_identities, {"minus": fm, "plus": fp})


# Delta formula ----------------------------------------------------------------

@dataclass(frozen=True)
class DeltaReport:
    n: np.ndarray
    delta: np.ndarray
    truncation: int
    truncation_error: float
    convention: str


def delta_formula(h: HierarchyData, beta: np.ndarray, truncation: int | None = None,
                  tol: float = 1e-12, convention: str = "derived") -> DeltaReport:
    """Martingale increments from the series representation.

    ``B_n = sum_{k >= n} beta_{k+1} [zeta_n ... zeta_{k-1} v_k - (sigma_k v_k) 1]``.

    ``convention="derived"`` returns ``beta_{n+1} (sigma_n v_n) 1 + B_n - B_{n+1}``,
    which equals ``m_n - m_{n+1}`` for the martingale built from
    ``u_n = beta_{n+1} v_n``.  ``convention="literal"`` evaluates
    ``beta_n (sigma_n v_n) 1 + B_{n+1} - B_n`` with the index placement reversed.
    ``beta`` is indexed like the harmonic solve range.
    """
    s0, s1 = solve_range(h)
    o = h.offset
    lo, hi = h.analysis_window
    m = h.m
    bmax = float(np.max(np.abs(beta)))
    sv = np.einsum("ki,ki->k", h.sigma, h.v)  # sigma_k v_k on the env index

    def bracket_series(n: int) -> tuple[np.ndarray, int, float]:
        total = np.zeros(m)
        prod = np.eye(m)
        k = n
        while True:
            if k + 1 > s1:
                raise TruncationInsufficient(f"series for B_{n} runs past the solve range")
            br = prod @ h.v[k - o] - sv[k - o]
            total += beta[k + 1 - s0] * br
            bn = float(np.abs(br).max())
            k += 1
            if truncation is not None:
                if k - n > truncation:
                    return total, k - n, bn * bmax
            elif bn * bmax < tol and k - n > 1:
                return total, k - n, bn * bmax
            prod = prod @ h.zeta[k - 1 - o]

    ns = np.arange(lo, hi + 2)
    B = np.empty((len(ns), m))
    used, err = 0, 0.0
    for i, n in enumerate(ns):
        B[i], t, e = bracket_series(int(n))
        used, err = max(used, t), max(err, e)
    k = ns[:-1] - o
    if convention == "derived":
        lead = beta[ns[:-1] + 1 - s0] * sv[k]
        delta = lead[:, None] + B[:-1] - B[1:]
    elif convention == "literal":
        lead = beta[ns[:-1] - s0] * sv[k]
        delta = lead[:, None] + B[1:] - B[:-1]
    else:
        raise ValueError(f"unknown convention {convention!r}")
    return DeltaReport(ns[:-1], delta, used, err, convention)


def rho_l_ratio(harm: HarmonicData) -> np.ndarray:
    """``rho_n beta-tilde_n / l_n`` over the window (constant when rho = c l / beta-tilde)."""
    h = harm.hier
    lo, hi = harm.window
    n = np.arange(lo, hi + 1)
    return harm.rho[n - harm.first] * harm.beta_tilde[n - harm.first, None] / h.l[n - h.offset]


# rate exponents ---------------------------------------------------------------

@dataclass(frozen=True)
class RateReport:
    beta1_mart: float
    beta1_occ: float
    beta1_qv: float
    stderr: dict[str, float]
    fit_windows: list[int]
    residuals: dict[str, list[float]]

    @property
    def beta1(self) -> float:
        return min(self.beta1_mart, self.beta1_occ, self.beta1_qv)

    def to_dict(self) -> dict[str, Any]:
        return {"beta1": self.beta1, "beta1_mart": self.beta1_mart, "beta1_occ": self.beta1_occ,
                "beta1_qv": self.beta1_qv, "stderr": self.stderr, "fit_windows": self.fit_windows,
                "residuals": self.residuals}


def _window_sums(values: np.ndarray, L: int, centers: np.ndarray) -> np.ndarray:
    """``sum_{j=k-L}^{k+L} values_j`` for every centre index ``k``."""
    c = np.concatenate([[0.0], np.cumsum(values)])
    return c[centers + L + 1] - c[centers - L]


def _fit_exponent(Ls: np.ndarray, dev: np.ndarray, scale: float) -> tuple[float, float]:
    """``1 - slope`` of log(dev) against log(L); infinite when the deviation vanishes."""
    if np.all(dev <= 1e-9 * scale * Ls):
        return math.inf, 0.0
    ok = dev > 0
    coef, cov = np.polyfit(np.log(Ls[ok]), np.log(dev[ok]), 1, cov=True)
    return float(1.0 - coef[0]), float(math.sqrt(max(cov[0, 0], 0.0)))


def rate_exponents(harm: HarmonicData, Ls: list[int] | None = None, n_centers: int = 64) -> RateReport:
    """Fit the exponents of the three window-sum deviations.

    For each half-width ``l`` the deviation is the largest of
    ``|m_{k+l}(1) - m_{k-l}(1) - 2l|``, ``|sum rho_j 1 - (2l+1) a|`` and
    ``|sum rho_j q_j - (2l+1) b|`` over one fixed grid of ``n_centers``
    centres (plus the centre at layer 0).  The fitted quantity at ``L`` is
    the running maximum over ``l <= L``: a bound ``C L^(1 - beta_1)`` on all
    windows up to ``L`` is what the rate condition asks for, and the envelope
    removes the resonant dips of quasiperiodic sequences that make the raw
    values erratic.  An identically vanishing deviation is reported as an
    infinite exponent.
    """
    lo, hi = harm.window
    width = hi - lo
    if Ls is None:
        Ls = sorted({int(x) for x in np.geomspace(8, width // 16, 12)})
    Ls = [int(L) for L in Ls]
    if len(Ls) < 4:
        raise InsufficientWindow("rate fits need at least 4 window sizes")
    Lmax = max(Ls)
    if 2 * Lmax + 1 > width:
        raise InsufficientWindow(f"window {harm.window} too small for L={Lmax}")
    n = np.arange(lo, hi + 1)
    k = n - harm.first
    m1 = harm.m_vec[k, 0]
    occ = harm.rho[k].sum(axis=1)
    qv = np.einsum("ki,ki->k", harm.rho[k], harm.q_vec[k])
    centers = np.linspace(Lmax, width - Lmax, n_centers).astype(int)
    if lo + Lmax <= 0 <= hi - Lmax:
        centers = np.append(centers, -lo)
    centers = np.unique(centers)
    raw = {"mart": [], "occ": [], "qv": []}
    for L in range(1, Lmax + 1):
        raw["mart"].append(float(np.abs(m1[centers + L] - m1[centers - L] - 2 * L).max()))
        raw["occ"].append(float(np.abs(_window_sums(occ, L, centers) - (2 * L + 1) * harm.a).max()))
        raw["qv"].append(float(np.abs(_window_sums(qv, L, centers) - (2 * L + 1) * harm.b).max()))
    sel = np.array(Ls) - 1
    devs = {key: np.maximum.accumulate(np.array(v))[sel].tolist() for key, v in raw.items()}
    La = np.array(Ls, dtype=float)
    fits = {key: _fit_exponent(La, np.array(v), scale) for (key, v), scale in
            zip(devs.items(), (1.0, harm.a, harm.b))}
    return RateReport(fits["mart"][0], fits["occ"][0], fits["qv"][0],
                      {k: v[1] for k, v in fits.items()}, Ls, devs)


# perturbation decay -----------------------------------------------------------

def perturbation_decay(base: HierarchyData, pert: HierarchyData, kappa: float | None = None,
                       min_n: int = 5, floor: float = 1e-13) -> dict[str, Any]:
    """Per-layer deviations between base and perturbed hierarchies with log-log slope fits."""
    if base.analysis_window != pert.analysis_window or base.env.window != pert.env.window:
        raise InsufficientWindow("hierarchies must share windows")
    sl = base.window_slice()
    n = np.arange(base.analysis_window[0], base.analysis_window[1] + 1)
    devs = {
        "zeta": norm(base.zeta[sl] - pert.zeta[sl]),
        "v": np.abs(base.v[sl] - pert.v[sl]).max(axis=1),
        "l": np.abs(base.l[sl] - pert.l[sl]).sum(axis=1),
        "A": norm(base.A[sl] - pert.A[sl]),
        "lambda": np.abs(base.lam[sl] - pert.lam[sl]),
        "lambda_tilde": np.abs(base.lam_tilde[sl] - pert.lam_tilde[sl]),
    }
    out: dict[str, Any] = {"n": n.tolist(), "kappa": kappa, "slopes": {}, "C": {}, "max": {}}
    far = np.abs(n) >= min_n
    for key, d in devs.items():
        out["max"][key] = float(d.max())
        ok = far & (d > floor)
        if ok.sum() >= 4:
            x, y = np.log(np.abs(n[ok]).astype(float)), np.log(d[ok])
            out["slopes"][key] = float(np.polyfit(x, y, 1)[0])
        else:
            out["slopes"][key] = None
        out["C"][key] = float(np.max(d * (np.abs(n).astype(float) ** (kappa or 0.0) + 1.0))) if kappa else None
    out["deviations"] = {k: v.tolist() for k, v in devs.items()}
    return out
