"""Monte Carlo checks of the limit theorems against harmonic predictions.

Every experiment returns an :class:`ExperimentReport` holding a list of
:class:`Comparison` records.  A two-sided comparison passes when
``|observed - predicted| <= tolerance + 3 * mc_error``; a ``bound``
comparison passes when ``observed <= tolerance`` (used for KS distances,
whose stated thresholds already absorb sampling noise).  Predictions come
only from the harmonic and Green modules, never from the simulated data.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Sequence

import numpy as np
from scipy import special, stats

from . import rng
from .env import Environment
from .errors import EmptySample, InsufficientCounts, NonConvergent
from .green import exit_probability
from .harmonic import HarmonicData, SkewParams
from .walker import TrajectorySpec, run_ensemble

MIN_CELL_COUNT = 100


# reports ----------------------------------------------------------------------

@dataclass
class Comparison:
    name: str
    observed: float
    predicted: float
    tolerance: float
    mc_error: float = 0.0
    kind: str = "two-sided"  # or "bound"
    provenance: str = ""

    @property
    def passed(self) -> bool:
        if not np.isfinite(self.observed):
            return False
        if self.kind == "bound":
            return bool(self.observed <= self.tolerance)
        return bool(abs(self.observed - self.predicted) <= self.tolerance + 3.0 * self.mc_error)

    def to_dict(self) -> dict[str, Any]:
        return {**asdict(self), "passed": self.passed}


@dataclass
class ExperimentReport:
    name: str
    config_hash: str
    seed: int
    n_traj: int
    statistics: dict[str, Any] = field(default_factory=dict)
    comparisons: list[Comparison] = field(default_factory=list)
    data: dict[str, Any] = field(default_factory=dict, repr=False)  # raw samples, not serialized

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.comparisons)

    def comparison(self, name: str) -> Comparison:
        for c in self.comparisons:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self) -> dict[str, Any]:
        return {"name": self.name, "config_hash": self.config_hash, "seed": self.seed, "n_traj": self.n_traj,
                "passed": self.passed, "statistics": _jsonable(self.statistics),
                "comparisons": [c.to_dict() for c in self.comparisons]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_text(self) -> str:
        lines = [f"{self.name}  seed={self.seed}  n_traj={self.n_traj}  hash={self.config_hash[:12]}"]
        for c in self.comparisons:
            mark = "PASS" if c.passed else "FAIL"
            rel = "<=" if c.kind == "bound" else "~"
            lines.append(f"  [{mark}] {c.name:<32} obs={c.observed:<12.6g} {rel} pred={c.predicted:<12.6g}"
                         f" tol={c.tolerance:<8.3g} mc={c.mc_error:.3g}")
        return "\n".join(lines)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    return obj


def config_hash(config: dict[str, Any]) -> str:
    return hashlib.sha256(json.dumps(_jsonable(config), sort_keys=True).encode()).hexdigest()


def _env_tag(env: Environment) -> dict[str, Any]:
    return {"generator": env.generator, "window": list(env.window), "width": env.width}


# KS statistics ----------------------------------------------------------------

def lattice_spacing(values: np.ndarray) -> int:
    """Greatest common divisor of the gaps between distinct integer values (0 if one value)."""
    u = np.unique(np.asarray(values, dtype=np.int64))
    if len(u) < 2:
        return 0
    return int(np.gcd.reduce(np.diff(u)))


def ks_statistic(samples, cdf: Callable[[np.ndarray], np.ndarray], spacing: float | None = None) -> float:
    """One-sample two-sided KS distance ``sup_x |F_n(x) - F(x)|``.

    With ``spacing`` the samples are treated as lattice valued and the
    reference is read at ``x +- spacing / 2`` (continuity correction).
    """
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise EmptySample("no samples")
    vals, counts = np.unique(x, return_counts=True)
    right = np.cumsum(counts) / x.size
    left = right - counts / x.size
    h = 0.5 * spacing if spacing else 0.0
    return float(max(np.max(np.abs(right - cdf(vals + h))), np.max(np.abs(left - cdf(vals - h)))))


def ks_discrete(samples, support: np.ndarray, probs: np.ndarray) -> float:
    """KS distance between the empirical law and a discrete law on ``support``."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise EmptySample("no samples")
    order = np.argsort(support)
    support, ref = np.asarray(support, float)[order], np.cumsum(np.asarray(probs, float)[order])
    grid = np.union1d(support, x)
    emp = np.searchsorted(np.sort(x), grid, side="right") / x.size
    idx = np.searchsorted(support, grid, side="right") - 1
    F = np.where(idx >= 0, ref[np.clip(idx, 0, None)], 0.0)
    return float(np.max(np.abs(emp - F)))


def normal_cdf(scale: float) -> Callable[[np.ndarray], np.ndarray]:
    return lambda x: stats.norm.cdf(np.asarray(x) / scale)


def half_normal_cdf(scale: float) -> Callable[[np.ndarray], np.ndarray]:
    return lambda x: np.where(np.asarray(x) < 0, 0.0, special.erf(np.maximum(x, 0.0) / (scale * math.sqrt(2.0))))


def skew_normal_cdf(p: float, scale: float) -> Callable[[np.ndarray], np.ndarray]:
    """Marginal CDF of skew Brownian motion with parameter ``p`` at a time of variance ``scale**2``."""
    def F(x):
        z = stats.norm.cdf(np.asarray(x) / scale)
        return np.where(np.asarray(x) < 0, 2.0 * (1.0 - p) * z, (1.0 - p) + p * (2.0 * z - 1.0))
    return F


def local_time_cdf(x: float, a: float, D: float) -> Callable[[np.ndarray], np.ndarray]:
    """CDF of ``(|Z| - |x| / sqrt(D))^+ / (a sqrt(D))``, the limit law of ``V / (rho sqrt(N))``."""
    z = abs(x) / math.sqrt(D)
    s = a * math.sqrt(D)
    return lambda v: np.where(np.asarray(v) < 0, 0.0, special.erf((z + s * np.maximum(v, 0.0)) / math.sqrt(2.0)))


def local_time_mean(x: float, a: float, D: float) -> float:
    z = abs(x) / math.sqrt(D)
    return float((2.0 * stats.norm.pdf(z) - 2.0 * z * stats.norm.sf(z)) / (a * math.sqrt(D)))


# observables ------------------------------------------------------------------

@dataclass
class ObservableSpec:
    """Bounded function on sites.

    ``rule`` is one of ``"one"``, ``"lane:<j>"``, ``"even-layer"`` or
    ``"constant:<c>"``; alternatively ``table`` gives explicit values for the
    layers ``first, first + 1, ...``.
    """

    rule: str | None = None
    table: np.ndarray | None = None
    first: int | None = None

    def values(self, layers: np.ndarray, m: int) -> np.ndarray:
        layers = np.asarray(layers)
        if self.table is not None:
            k = layers - int(self.first)
            if k.min() < 0 or k.max() >= len(self.table):
                raise ValueError("observable table does not cover the requested layers")
            return np.asarray(self.table, dtype=float)[k]
        rule = self.rule or "one"
        out = np.zeros((len(layers), m))
        if rule == "one":
            out[:] = 1.0
        elif rule.startswith("constant:"):
            out[:] = float(rule.split(":", 1)[1])
        elif rule.startswith("lane:"):
            j = int(rule.split(":", 1)[1])
            if not 0 <= j < m:
                raise ValueError(f"lane {j} outside 0..{m - 1}")
            out[:, j] = 1.0
        elif rule == "even-layer":
            out[layers % 2 == 0] = 1.0
        else:
            raise ValueError(f"unknown observable rule {rule!r}")
        return out

    def on_env(self, env: Environment) -> np.ndarray:
        return self.values(env.layers, env.width)

    def weighted(self, harm: HarmonicData) -> np.ndarray:
        """``rho_l h_l`` on the harmonic analysis window."""
        lo, hi = harm.window
        n = np.arange(lo, hi + 1)
        return np.einsum("ki,ki->k", harm.rho[harm.idx(n)], self.values(n, harm.m))

    def predicted_average(self, harm: HarmonicData) -> float:
        """The average ``h-frak`` of ``rho_l h_l`` over the analysis window."""
        return float(self.weighted(harm).mean())

    def self_averaging_check(self, harm: HarmonicData, N: int, K: float = 2.0, eps: float = 0.1,
                             delta: float | None = None) -> dict[str, Any]:
        """Largest deviation of local averages of ``rho_l h_l`` at scale ``delta_N N^(1/4)``.

        Centers range over ``|k| <= K sqrt(N)`` (clipped to the analysis
        window) and the deviation is relative to ``max(|h-frak|, 1)``.
        """
        delta = N ** (-1.0 / 16.0) if delta is None else delta
        half = max(1, math.ceil(delta * N ** 0.25))
        w = self.weighted(harm)
        lo, hi = harm.window
        hbar = float(w.mean())
        cs = np.concatenate([[0.0], np.cumsum(w)])
        kmax = min(int(K * math.sqrt(N)), hi - half, -lo - half)
        if kmax < 0:
            raise NonConvergent("analysis window too small for the self-averaging scan")
        k = np.arange(-kmax, kmax + 1)
        i0, i1 = k - half - lo, k + half - lo + 1
        local = (cs[i1] - cs[i0]) / (2 * half + 1)
        dev = float(np.max(np.abs(local - hbar)) / max(abs(hbar), 1.0))
        return {"h_bar": hbar, "half_width": half, "max_deviation": dev, "eps": eps, "passed": dev <= eps}


# exact laws -------------------------------------------------------------------

def site_law(env: Environment, start: tuple[int, int], N: int) -> np.ndarray:
    """Exact law of ``xi(N)`` by forward propagation; shape ``(len(env), m)``.

    Mass reaching the outermost layers is kept there, so the result is exact
    whenever ``N`` is smaller than the distance from ``start`` to the window edge.
    """
    mu = np.zeros((len(env), env.width))
    mu[env.index(start[0]), start[1]] = 1.0
    P, Q, R = env.P, env.Q, env.R
    for _ in range(N):
        nxt = np.einsum("ki,kij->kj", mu, R)
        nxt[1:] += np.einsum("ki,kij->kj", mu[:-1], P[:-1])
        nxt[:-1] += np.einsum("ki,kij->kj", mu[1:], Q[1:])
        mu = nxt
    return mu


def skew_rw_law(p: float, N: int) -> tuple[np.ndarray, np.ndarray]:
    """Exact law of ``X_N`` for the walk that is symmetric off 0 and steps right from 0 w.p. ``p``."""
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie in (0, 1)")
    half = min(N, int(8 * math.sqrt(N)) + 10)
    x = np.arange(-half, half + 1)
    mu = np.zeros(len(x))
    mu[half] = 1.0
    for _ in range(N):
        out = 0.5 * mu
        at0 = mu[half]
        out[half] = 0.0
        nxt = np.zeros_like(mu)
        nxt[1:] += out[:-1]
        nxt[:-1] += out[1:]
        nxt[half + 1] += p * at0
        nxt[half - 1] += (1.0 - p) * at0
        mu = nxt
    return x, mu


def skew_rw_oracle(p: float, N: int, n_traj: int, seed: int) -> np.ndarray:
    """Samples of ``X_N / sqrt(N)`` for the skew random walk.

    Endpoints are drawn exactly from the ``N``-step law of :func:`skew_rw_law`
    by inverse CDF from the stream ``(seed, -1)``, which no trajectory uses.
    """
    x, mu = skew_rw_law(p, N)
    cdf = np.cumsum(mu)
    cdf /= cdf[-1]
    u = rng.stream(seed, -1).random(n_traj)
    return x[np.minimum(np.searchsorted(cdf, u, side="right"), len(x) - 1)] / math.sqrt(N)


# helpers ----------------------------------------------------------------------

def _mean_err(x: np.ndarray) -> tuple[float, float]:
    x = np.asarray(x, dtype=float)
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(len(x))) if len(x) > 1 else 0.0


def _check_D(harm: HarmonicData, override: dict[str, float] | None) -> dict[str, float]:
    consts = {"a": harm.a, "b": harm.b, "D": harm.D}
    consts.update(override or {})
    return consts


def _rho_at(harm: HarmonicData, site: tuple[int, int]) -> float:
    lo, hi = harm.first, harm.first + len(harm.rho) - 1
    if not lo <= site[0] <= hi:
        raise ValueError(f"layer {site[0]} outside the harmonic solve range [{lo}, {hi}]")
    return float(harm.rho[harm.idx(site[0]), site[1]])


# experiments ------------------------------------------------------------------

def clt_experiment(env: Environment, harm: HarmonicData, N: int | Sequence[int], n_traj: int, seed: int,
                   t_marks: Sequence[float] = (0.5, 1.0), start: tuple[int, int] = (0, 0),
                   ks_tol: float = 0.05, cov_tol: float = 0.0, override: dict[str, float] | None = None
                   ) -> ExperimentReport:
    """KS of ``X_N / sqrt(D N)`` against the standard normal for each ``N``.

    At the largest ``N`` the report also holds the covariance of
    ``(W_N(s), W_N(t))`` for the first two marks against ``D min(s, t)`` and
    the martingale cross-check ``E (m(xi_N) - m(xi_0))^2 = E sum_{t<N} q(xi_t)``.
    """
    Ns = sorted({int(n) for n in np.atleast_1d(N)})
    c = _check_D(harm, override)
    D = c["D"]
    cfg = {"experiment": "clt", "env": _env_tag(env), "N": Ns, "n_traj": n_traj, "t_marks": list(t_marks),
           "start": list(start), "override": override or {}}
    rep = ExperimentReport("clt", config_hash(cfg), seed, n_traj)
    ks = {}
    q_table = np.nan_to_num(_on_env(env, harm, harm.q_vec), nan=0.0)
    for k, n in enumerate(Ns):
        last = k == len(Ns) - 1
        marks = sorted({int(round(t * n)) for t in t_marks}) if last else []
        spec = TrajectorySpec(env, start, n, marks=marks, observable=q_table if last else None)
        ens = run_ensemble(spec, n_traj, seed + k)
        X = ens.X - start[0]
        scale = math.sqrt(D * n)
        g = lattice_spacing(X)
        ks[n] = ks_statistic(X / scale, normal_cdf(1.0), spacing=g / scale if g else None)
        if last:
            rep.statistics["mean_X"] = float(X.mean())
            rep.statistics["var_X_over_N"] = float(X.var() / n)
            if len(marks) >= 2:
                s, t = marks[0] / n, marks[1] / n
                W = (ens.marks[:, :, 0] - start[0]) / math.sqrt(n)
                prod = (W[:, 0] - W[:, 0].mean()) * (W[:, 1] - W[:, 1].mean())
                cov, err = _mean_err(prod)
                rep.comparisons.append(Comparison(f"cov_W({s:g},{t:g})", cov, D * min(s, t), cov_tol, err,
                                                  provenance="D min(s, t)"))
            mv = _on_env(env, harm, harm.m_vec)
            inc = mv[ens.endpoint[:, 0] - env.window[0], ens.endpoint[:, 1]] - mv[env.index(start[0]), start[1]]
            diff = inc ** 2 - ens.H
            mean_diff, err = _mean_err(diff)
            rep.statistics["martingale_var_over_N"] = float(np.mean(inc ** 2) / n)
            rep.comparisons.append(Comparison("martingale_identity", mean_diff / n, 0.0, 0.0, err / n,
                                              provenance="optional stopping for m(xi)"))
            rep.comparisons.append(Comparison("martingale_variance", float(np.mean(inc ** 2) / n), D,
                                              0.05 * D, float(np.std(inc ** 2) / n / math.sqrt(n_traj)),
                                              provenance="b / a"))
    rep.statistics["ks"] = {str(n): v for n, v in ks.items()}
    rep.statistics["D"] = D
    top = Ns[-1]
    rep.comparisons.append(Comparison(f"ks_N={top}", ks[top], 0.0, ks_tol, 0.87 / math.sqrt(n_traj), "bound",
                                      "Phi with D from harmonic"))
    if len(Ns) > 1:
        rep.comparisons.append(Comparison("ks_decreasing", float(ks[top] - ks[Ns[0]]), 0.0, 0.0, 0.0, "bound",
                                          f"KS({top}) - KS({Ns[0]}) must not be positive"))
    return rep


def _on_env(env: Environment, harm: HarmonicData, arr: np.ndarray) -> np.ndarray:
    """Harmonic per-site array laid out on the env window (NaN outside the solve range)."""
    out = np.full((len(env), env.width), np.nan)
    k = harm.idx(env.layers)
    ok = (k >= 0) & (k < len(arr))
    out[ok] = arr[k[ok]]
    return out


def lln_experiment(env: Environment, harm: HarmonicData, obs: ObservableSpec, N: int, n_traj: int, seed: int,
                   start: tuple[int, int] = (0, 0), tol: float = 0.02, eps: float = 0.05,
                   override: dict[str, float] | None = None) -> ExperimentReport:
    """Law of ``H_N / N`` against ``h-frak / a``; ``tol`` is relative to the prediction."""
    sa = obs.self_averaging_check(harm, N)
    if not sa["passed"]:
        raise NonConvergent(f"observable is not self-averaging (deviation {sa['max_deviation']:.3g})")
    c = _check_D(harm, override)
    pred = sa["h_bar"] / c["a"]
    cfg = {"experiment": "lln", "env": _env_tag(env), "obs": obs.rule, "N": N, "n_traj": n_traj,
           "start": list(start), "override": override or {}}
    ens = run_ensemble(TrajectorySpec(env, start, N, observable=obs.on_env(env)), n_traj, seed)
    ratio = ens.H / N
    mean, err = _mean_err(ratio)
    rep = ExperimentReport("lln", config_hash(cfg), seed, n_traj)
    rep.statistics.update({"self_averaging": sa, "mass_outside_eps": float(np.mean(np.abs(ratio - pred) > eps)),
                           "std": float(ratio.std())})
    rep.comparisons.append(Comparison("mean_H_over_N", mean, pred, tol * abs(pred), err, provenance="h / a"))
    return rep


def local_time_experiment(env: Environment, harm: HarmonicData, N: int | Sequence[int], n_traj: int, seed: int,
                          x: float = 0.0, lane: int = 0, start: tuple[int, int] = (0, 0),
                          mean_tol: float = 0.05, ks_tol: float = 0.03, thresholds: Sequence[float] = (1.0, 2.0),
                          override: dict[str, float] | None = None) -> ExperimentReport:
    """Law of ``V((k_N, lane), N) / (rho sqrt(N))`` with ``k_N = round(x sqrt(N))``.

    The reference is the law of ``(|Z| - |x| / sqrt(D))^+ / (a sqrt(D))``,
    which is ``|N(0, 1/(a b))|`` at ``x = 0``.  Comparisons are made at the
    largest ``N``; the uniform-integrability proxy ``E[V/sqrt(N); V/sqrt(N) > T]``
    is reported for every ``N``.
    """
    Ns = sorted({int(n) for n in np.atleast_1d(N)})
    c = _check_D(harm, override)
    a, D = c["a"], c["D"]
    cfg = {"experiment": "local_time", "env": _env_tag(env), "N": Ns, "n_traj": n_traj, "x": x, "lane": lane,
           "start": list(start), "override": override or {}}
    rep = ExperimentReport("local_time", config_hash(cfg), seed, n_traj)
    tails = {}
    for i, n in enumerate(Ns):
        site = (start[0] + int(round(x * math.sqrt(n))), lane)
        rho = _rho_at(harm, site)
        ens = run_ensemble(TrajectorySpec(env, start, n, local_time_sites=[site]), n_traj, seed + i)
        V = ens.local_times[:, 0].astype(float)
        tails[str(n)] = {str(T): float(np.mean(V / math.sqrt(n) * (V / math.sqrt(n) > T))) for T in thresholds}
        if i == len(Ns) - 1:
            y = V / (rho * math.sqrt(n))
            mean, err = _mean_err(y)
            ks = ks_statistic(y, local_time_cdf(x, a, D), spacing=1.0 / (rho * math.sqrt(n)))
            rep.statistics.update({"site": list(site), "rho": rho, "mean": mean,
                                   "reference_scale": 1.0 / (a * math.sqrt(D))})
            pred = local_time_mean(x, a, D)
            rep.comparisons.append(Comparison("mean_scaled_local_time", mean, pred, mean_tol * pred, err,
                                              provenance="E (|Z| - |x|/sqrt(D))^+ / (a sqrt(D))"))
            rep.comparisons.append(Comparison("ks_scaled_local_time", ks, 0.0, ks_tol, 0.87 / math.sqrt(n_traj),
                                              "bound", "Brownian local time law"))
            rep.data["scaled_local_time"] = y
            rep.data["endpoints"] = ens.endpoint
    rep.statistics["ui_tails"] = tails
    return rep


def gaussian_cell(k: float, sd: float, width: float = 1.0) -> float:
    """``P(sd Z in [k - width/2, k + width/2])``."""
    return float(stats.norm.cdf((k + 0.5 * width) / sd) - stats.norm.cdf((k - 0.5 * width) / sd))


def llt_experiment(env: Environment, harm: HarmonicData, k_rule: Sequence[float], N: int | Sequence[int],
                   n_traj: int, seed: int, lanes: Sequence[int] | None = None, start: tuple[int, int] = (0, 0),
                   tol: float = 0.10, method: str = "mc", parity: bool = False, symmetric: bool = False,
                   endpoints: np.ndarray | None = None, override: dict[str, float] | None = None
                   ) -> ExperimentReport:
    """Ratio ``P(xi(N) = (k_N, y)) / (P(sqrt(bN/a) Z in [k_N +- 1/2]) rho(k_N, y))`` against ``1/a``.

    ``k_N = floor(c sqrt(N))`` for each ``c`` in ``k_rule``.  With
    ``method="mc"`` the probability is an endpoint frequency, and a cell with
    fewer than 100 counts raises :class:`InsufficientCounts`; ``symmetric``
    pools the cells at ``+-k_N`` (their ``rho`` and Gaussian weights are
    divided accordingly).  ``method="exact"`` propagates the law of ``xi(N)``
    forward and has no sampling error.  ``parity`` selects the period-2 form:
    ``k_N`` is moved to the parity of ``N`` and the prediction is ``2/a``.
    ``endpoints`` reuses a precomputed ensemble at a single ``N``.
    """
    if method not in ("mc", "exact"):
        raise ValueError(f"method must be 'mc' or 'exact', not {method!r}")
    Ns = [int(n) for n in np.atleast_1d(N)]
    c = _check_D(harm, override)
    a, b = c["a"], c["b"]
    lanes = list(range(env.width)) if lanes is None else list(lanes)
    pred = (2.0 if parity else 1.0) / a
    cfg = {"experiment": "llt", "env": _env_tag(env), "N": Ns, "k_rule": list(k_rule), "lanes": lanes,
           "method": method, "parity": parity, "symmetric": symmetric, "n_traj": n_traj, "start": list(start),
           "override": override or {}}
    rep = ExperimentReport("llt", config_hash(cfg), seed, n_traj if method == "mc" else 0)
    cells = []
    for i, n in enumerate(Ns):
        sd = math.sqrt(b * n / a)
        if method == "exact":
            law = site_law(env, start, n)
        elif endpoints is not None:
            ends = np.asarray(endpoints)
        else:
            ends = run_ensemble(TrajectorySpec(env, start, n), n_traj, seed + i).endpoint
        for cr in k_rule:
            k = int(math.floor(cr * math.sqrt(n)))
            if parity and (k - n) % 2:
                k += 1
            for y in lanes:
                ks = [k, -k] if symmetric and k != 0 else [k]
                sites = [(start[0] + kk, y) for kk in ks]
                weight = sum(gaussian_cell(kk, sd) * _rho_at(harm, s) for kk, s in zip(ks, sites))
                if method == "exact":
                    prob = sum(float(law[env.index(s[0]), s[1]]) for s in sites)
                    err = 0.0
                    count = None
                else:
                    count = int(sum(np.sum((ends[:, 0] == s[0]) & (ends[:, 1] == s[1])) for s in sites))
                    if count < MIN_CELL_COUNT:
                        raise InsufficientCounts(f"cell k={k}, lane {y}, N={n} has {count} < "
                                                 f"{MIN_CELL_COUNT} counts; widen n_traj")
                    prob = count / len(ends)
                    err = math.sqrt(prob * (1 - prob) / len(ends))
                ratio = prob / weight
                cells.append({"N": n, "k": k, "lane": y, "count": count, "probability": prob, "ratio": ratio})
                rep.comparisons.append(Comparison(f"ratio_N={n}_k={k}_y={y}", ratio, pred, tol * pred,
                                                  err / weight, provenance="2/a" if parity else "1/a"))
    rep.statistics["cells"] = cells
    return rep


def mixing_experiment(env: Environment, harm: HarmonicData, obs: ObservableSpec, N: Sequence[int], n_traj: int,
                      seed: int, starts: Sequence[tuple[int, int]] = ((0, 0), (10, 0)), tol: float = 0.05,
                      override: dict[str, float] | None = None) -> ExperimentReport:
    """``E h(xi(N))`` for several ``N`` and starts against ``h-frak / a``; tolerance relative."""
    Ns = sorted(int(n) for n in N)
    c = _check_D(harm, override)
    sa = obs.self_averaging_check(harm, Ns[-1])
    pred = sa["h_bar"] / c["a"]
    h = obs.on_env(env)
    cfg = {"experiment": "mixing", "env": _env_tag(env), "obs": obs.rule, "N": Ns, "n_traj": n_traj,
           "starts": [list(s) for s in starts], "override": override or {}}
    rep = ExperimentReport("mixing", config_hash(cfg), seed, n_traj)
    est = {}
    for si, s in enumerate(starts):
        ens = run_ensemble(TrajectorySpec(env, tuple(s), Ns[-1], marks=Ns), n_traj, seed + si)
        for ni, n in enumerate(Ns):
            vals = h[ens.marks[:, ni, 0] - env.window[0], ens.marks[:, ni, 1]]
            mean, err = _mean_err(vals)
            est[(si, n)] = (mean, err)
            rep.comparisons.append(Comparison(f"Eh_N={n}_start={tuple(s)}", mean, pred, tol * abs(pred), err,
                                              provenance="h / a"))
    for n in Ns:
        (m0, e0), (m1, e1) = est[(0, n)], est[(len(starts) - 1, n)]
        rep.comparisons.append(Comparison(f"start_independence_N={n}", m0 - m1, 0.0, 0.0, math.hypot(e0, e1)))
    rep.statistics["self_averaging"] = sa
    rep.statistics["estimates"] = {f"{si}:{n}": v for (si, n), v in est.items()}
    return rep


def semilocal_experiment(env: Environment, harm: HarmonicData, gamma: float, N: int, n_traj: int, seed: int,
                         start: tuple[int, int] = (0, 0), tol: float = 0.15, reach: float = 2.0,
                         override: dict[str, float] | None = None) -> ExperimentReport:
    """Interval probabilities at scale ``N^gamma`` against the Gaussian with variance ``D N``.

    Intervals have even integer length ``2 ceil(N^gamma / 2)`` and
    half-integer endpoints, so each holds equally many sites of each parity;
    they tile ``[-reach sqrt(DN), reach sqrt(DN)]`` symmetrically about ``start``.
    """
    if not 0.0 < gamma < 0.5:
        raise ValueError("gamma must lie in (0, 1/2)")
    c = _check_D(harm, override)
    sd = math.sqrt(c["D"] * N)
    ell = 2 * math.ceil(N ** gamma / 2)
    n_int = int(2 * reach * sd // ell)
    left0 = -(n_int * ell) // 2
    cfg = {"experiment": "semilocal", "env": _env_tag(env), "gamma": gamma, "N": N, "n_traj": n_traj,
           "start": list(start), "override": override or {}}
    X = run_ensemble(TrajectorySpec(env, start, N), n_traj, seed).X - start[0]
    rep = ExperimentReport("semilocal", config_hash(cfg), seed, n_traj)
    rows, worst = [], (0.0, None)
    for i in range(n_int):
        s = left0 + i * ell  # integers s .. s + ell - 1
        count = int(np.sum((X >= s) & (X < s + ell)))
        if count < MIN_CELL_COUNT:
            raise InsufficientCounts(f"interval starting at {s} has {count} < {MIN_CELL_COUNT} counts")
        p_emp = count / n_traj
        p_ref = float(stats.norm.cdf((s + ell - 0.5) / sd) - stats.norm.cdf((s - 0.5) / sd))
        dev = p_emp / p_ref - 1.0
        err = math.sqrt(p_emp * (1 - p_emp) / n_traj) / p_ref
        rows.append({"left": s - 0.5, "right": s + ell - 0.5, "count": count, "relative_deviation": dev})
        excess = abs(dev) - 3 * err
        if worst[1] is None or excess > worst[0]:
            worst = (excess, (dev, err, s))
    dev, err, s = worst[1]
    rep.statistics.update({"length": ell, "intervals": rows,
                           "max_relative_deviation": max(abs(r["relative_deviation"]) for r in rows)})
    rep.comparisons.append(Comparison("worst_interval_ratio", 1.0 + dev, 1.0, tol, err,
                                      provenance=f"Gaussian interval at {s - 0.5}"))
    return rep


def skew_experiment(base_env: Environment, pert_env: Environment, base_harm: HarmonicData,
                    pert_harm: HarmonicData, skew: SkewParams, N: int, n_traj: int, seed: int,
                    start: tuple[int, int] = (0, 0), p_tol: float = 0.02, ks_tol: float = 0.03,
                    exit_L: int = 50, exit_tol: float = 1e-9, oracle_n: int | None = None) -> ExperimentReport:
    """Skew limit of the walk in a locally perturbed environment.

    Reports the empirical ``P(X_N > 0)`` (the mass at 0 split evenly) against
    both orientations ``beta_+/(beta_+ + beta_-)`` and its complement and
    selects the closer one; KS of ``|X_N| / sqrt(N)`` against the skew-walk
    oracle with the selected parameter; and the Green-function probability of
    exiting ``(-L, L)`` on the right against ``beta_-/(beta_+ + beta_-)``.
    """
    D = base_harm.D
    cfg = {"experiment": "skew", "env": _env_tag(pert_env), "N": N, "n_traj": n_traj, "start": list(start),
           "exit_L": exit_L}
    rep = ExperimentReport("skew", config_hash(cfg), seed, n_traj)
    X = run_ensemble(TrajectorySpec(pert_env, start, N), n_traj, seed).X - start[0]
    pos = (np.sum(X > 0) + 0.5 * np.sum(X == 0)) / n_traj
    err = math.sqrt(pos * (1 - pos) / n_traj)
    cand = skew.candidates()
    selected = min(cand, key=lambda k: abs(cand[k] - pos))
    p_sel = cand[selected]
    rep.statistics.update({"P_positive": float(pos), "candidates": cand, "selected": selected, "p_selected": p_sel})
    rep.comparisons.append(Comparison("P(X>0)", float(pos), p_sel, p_tol, err, provenance=selected))
    # oracle: exact law of the skew walk, rescaled by sqrt(D)
    x, mu = skew_rw_law(p_sel, N)
    ax = np.abs(x)
    sup, inv = np.unique(ax, return_inverse=True)
    pm = np.bincount(inv, weights=mu)
    ks_abs = ks_discrete(np.abs(X) / math.sqrt(N), sup * math.sqrt(D) / math.sqrt(N), pm)
    rep.comparisons.append(Comparison("ks_abs_vs_oracle", ks_abs, 0.0, ks_tol, 0.87 / math.sqrt(n_traj), "bound",
                                      f"skew walk law with p={p_sel:.6g}"))
    g = lattice_spacing(X)
    sc = math.sqrt(D * N)
    rep.statistics["ks_signed_vs_skew_bm"] = ks_statistic(X / sc, skew_normal_cdf(p_sel, 1.0),
                                                          spacing=g / sc if g else None)
    if oracle_n:
        samples = skew_rw_oracle(p_sel, N, oracle_n, seed)
        rep.statistics["oracle_P_positive"] = float((np.sum(samples > 0) + 0.5 * np.sum(samples == 0)) / oracle_n)
    exact, pred_M = exit_probability(pert_env, pert_harm, start[0] - exit_L, start[0] + exit_L, start, "right")
    target = skew.beta_minus / (skew.beta_plus + skew.beta_minus)
    rep.statistics.update({"exit_exact": exact, "exit_martingale": pred_M, "exit_target": target})
    rep.comparisons.append(Comparison("green_exit_right", exact, target, exit_tol, 0.0,
                                      provenance="beta_- / (beta_+ + beta_-)"))
    return rep
