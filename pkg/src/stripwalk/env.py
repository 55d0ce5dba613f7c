"""Environments on the strip Z x {1..m}.

An environment is a window of layer triples ``(P_n, Q_n, R_n)`` of non-negative
m x m matrices with ``(P_n + Q_n + R_n) 1 = 1``.  ``P_n`` moves the walker to
layer n+1, ``Q_n`` to layer n-1 and ``R_n`` keeps it in layer n.

Three generator families are supported, plus explicit JSON files:

``quasiperiodic``
    Triples are exponentials of trigonometric polynomials on the torus,
    evaluated at ``omega + n * gamma`` and normalized row-wise.
``iid``
    Balanced (zero-drift) walks on Z with jumps of length at most m, embedded
    into the strip by ``x -> (floor(x / m), x mod m)``.  Each layer is drawn
    from its own counter-based stream keyed by ``(seed, n)``.
``perturbed-srw``
    Nearest-neighbour walks on Z with ``p_n = 1/2 - a_n``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import rng
from .errors import (
    ConfigInvalid,
    NonStochasticSpec,
    SingularLayer,
    UnknownGeneratorTag,
    WidthMismatch,
)

STOCH_TOL = 1e-12
GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def norm(a: np.ndarray) -> float | np.ndarray:
    """Max-row-sum norm; batched over leading axes for matrices, max-abs for vectors."""
    a = np.asarray(a)
    if a.ndim == 1:
        return float(np.max(np.abs(a)))
    out = np.max(np.sum(np.abs(a), axis=-1), axis=-1)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class LayerTriple:
    P: np.ndarray
    Q: np.ndarray
    R: np.ndarray

    def check(self, tol: float = STOCH_TOL) -> None:
        for name, mat in (("P", self.P), ("Q", self.Q), ("R", self.R)):
            if np.any(mat < 0):
                raise NonStochasticSpec(f"negative entry in {name}")
        rows = (self.P + self.Q + self.R).sum(axis=1)
        if np.max(np.abs(rows - 1.0)) > tol:
            raise NonStochasticSpec(f"row sums {rows} differ from 1")


@dataclass(frozen=True)
class EllipticityReport:
    eps_bar: float
    k0: int
    passed: bool
    violations: list[tuple[int, str, float]] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "eps_bar": self.eps_bar,
            "k0": self.k0,
            "pass": self.passed,
            "violations": [list(v) for v in self.violations],
        }


@dataclass(frozen=True, eq=False)
class Environment:
    """Immutable window of layer triples.

    ``P``, ``Q`` and ``R`` have shape ``(N_plus - N_minus + 1, m, m)``; layer
    ``n`` lives at index ``n - N_minus``.
    """

    width: int
    window: tuple[int, int]
    P: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    generator: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        lo, hi = self.window
        shape = (hi - lo + 1, self.width, self.width)
        for name in ("P", "Q", "R"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=float)
            if arr.shape != shape:
                raise WidthMismatch(f"{name} has shape {arr.shape}, expected {shape}")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def m(self) -> int:
        return self.width

    @property
    def layers(self) -> np.ndarray:
        lo, hi = self.window
        return np.arange(lo, hi + 1)

    def __len__(self) -> int:
        return self.window[1] - self.window[0] + 1

    def index(self, n: int) -> int:
        lo, hi = self.window
        if not lo <= n <= hi:
            raise IndexError(f"layer {n} outside window {self.window}")
        return n - lo

    def layer(self, n: int) -> LayerTriple:
        k = self.index(n)
        return LayerTriple(self.P[k], self.Q[k], self.R[k])

    def restrict(self, window: tuple[int, int]) -> Environment:
        lo, hi = window
        a, b = self.index(lo), self.index(hi)
        return Environment(self.width, (lo, hi), self.P[a:b + 1], self.Q[a:b + 1],
                           self.R[a:b + 1], dict(self.generator), dict(self.metadata))

    def reflect(self) -> Environment:
        """Mirror image n -> -n (swaps the roles of P and Q)."""
        lo, hi = self.window
        return Environment(self.width, (-hi, -lo), self.Q[::-1], self.P[::-1], self.R[::-1],
                           {"kind": "reflected", "of": self.generator})

    def identical(self, other: Environment) -> bool:
        """Bitwise equality of the layer data."""
        return (self.width == other.width and tuple(self.window) == tuple(other.window)
                and all(np.array_equal(getattr(self, k), getattr(other, k)) for k in "PQR"))

    def check(self, tol: float = STOCH_TOL) -> None:
        for name, mat in (("P", self.P), ("Q", self.Q), ("R", self.R)):
            bad = np.argwhere(mat < 0)
            if len(bad):
                raise NonStochasticSpec(f"negative entry in {name} at layer {self.layers[bad[0][0]]}")
        dev = np.abs((self.P + self.Q + self.R).sum(axis=2) - 1.0)
        if dev.max() > tol:
            k = int(np.argmax(dev.max(axis=1)))
            raise NonStochasticSpec(f"layer {self.layers[k]} row sums off by {dev[k].max():.3e}")

    # serialization ----------------------------------------------------------
    def to_dict(self) -> dict[str, Any]:
        return {
            "m": self.width,
            "window": list(self.window),
            "layers": [
                {"n": int(n), "P": self.P[k].tolist(), "Q": self.Q[k].tolist(), "R": self.R[k].tolist()}
                for k, n in enumerate(self.layers)
            ],
        }

    def save(self, path: str | Path) -> None:
        # json writes floats with repr(), which round-trips all 17 digits
        Path(path).write_text(json.dumps(self.to_dict()))


def from_dict(data: dict[str, Any], path: str | None = None) -> Environment:
    m = int(data["m"])
    lo, hi = (int(x) for x in data["window"])
    by_n = {int(layer["n"]): layer for layer in data["layers"]}
    missing = [n for n in range(lo, hi + 1) if n not in by_n]
    if missing:
        raise ConfigInvalid(f"explicit environment lacks layers {missing[:5]}...")
    mats = {k: np.array([by_n[n][k] for n in range(lo, hi + 1)], dtype=float) for k in "PQR"}
    env = Environment(m, (lo, hi), mats["P"], mats["Q"], mats["R"],
                      {"kind": "explicit", "path": path} if path else {"kind": "explicit"})
    env.check()
    return env


def load_environment(path: str | Path) -> Environment:
    return from_dict(json.loads(Path(path).read_text()), str(path))


# generators -----------------------------------------------------------------

def _torus_table(table: dict, m: int, d: int) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    const = np.asarray(table.get("const", np.zeros((m, m))), dtype=float)
    terms = table.get("terms", [])
    ks = np.array([t["k"] for t in terms], dtype=float).reshape(len(terms), d)
    cos = np.array([t.get("cos", np.zeros((m, m))) for t in terms], dtype=float).reshape(len(terms), m, m)
    sin = np.array([t.get("sin", np.zeros((m, m))) for t in terms], dtype=float).reshape(len(terms), m, m)
    if const.shape != (m, m):
        raise WidthMismatch(f"coefficient table has shape {const.shape}, expected {(m, m)}")
    return const, ks, cos, sin


def _eval_trig(table, phases: np.ndarray) -> np.ndarray:
    """Log-weights at torus points ``phases`` (shape (L, d)); returns (L, m, m)."""
    const, ks, cos, sin = table
    out = np.broadcast_to(const, (len(phases),) + const.shape).copy()
    if len(ks):
        arg = 2.0 * np.pi * phases @ ks.T  # (L, terms)
        out += np.einsum("lt,tij->lij", np.cos(arg), cos)
        out += np.einsum("lt,tij->lij", np.sin(arg), sin)
    return out


def _quasiperiodic(spec: dict, lo: int, hi: int) -> tuple[int, np.ndarray, np.ndarray, np.ndarray]:
    coeffs = spec["coefficients"]
    m = int(spec.get("m", len(coeffs["P"]["const"])))
    gamma = np.atleast_1d(np.asarray(spec.get("rotation", [GOLDEN]), dtype=float))
    d = len(gamma)
    omega = np.atleast_1d(np.asarray(spec.get("base_point", [0.0] * d), dtype=float))
    symmetric = bool(spec.get("symmetric", True))
    tP = _torus_table(coeffs["P"], m, d)
    tR = _torus_table(coeffs["R"], m, d)
    if symmetric:
        if np.any(tR[3] != 0):
            raise NonStochasticSpec("symmetric quasiperiodic spec needs an even R table (no sine terms)")
        # Q(theta) = P(-theta): same cosine part, sine part negated
        tQ = (tP[0], tP[1], tP[2], -tP[3])
    else:
        tQ = _torus_table(coeffs["Q"], m, d)
    n = np.arange(lo, hi + 1, dtype=float)
    phases = np.mod(omega[None, :] + n[:, None] * gamma[None, :], 1.0)
    logw = np.concatenate([_eval_trig(t, phases) for t in (tP, tQ, tR)], axis=2)
    # softmax over the 3m successors of each site
    logw -= logw.max(axis=2, keepdims=True)
    w = np.exp(logw)
    w /= w.sum(axis=2, keepdims=True)
    return m, w[:, :, :m], w[:, :, m:2 * m], w[:, :, 2 * m:]


def balanced_jump_law(gen: np.random.Generator, m: int, jump: dict) -> np.ndarray:
    """Zero-mean law on {-m..m} (index j + m holds the weight of jump j)."""
    low, high = float(jump.get("low", 0.5)), float(jump.get("high", 1.5))
    s_low, s_high = float(jump.get("stay_low", 0.5)), float(jump.get("stay_high", 1.5))
    right = gen.uniform(low, high, m)
    left = gen.uniform(low, high, m)
    stay = gen.uniform(s_low, s_high)
    steps = np.arange(1, m + 1)
    mr, ml = steps @ right, steps @ left
    right *= math.sqrt(ml / mr)
    left *= math.sqrt(mr / ml)
    w = np.concatenate([left[::-1], [stay], right])
    return w / w.sum()


def embed_jump_laws(laws: np.ndarray, m: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Strip triple of one layer from the m per-lane jump laws (shape (m, 2m+1))."""
    P, Q, R = (np.zeros((m, m)) for _ in range(3))
    for i in range(m):
        for j in range(-m, m + 1):
            w = laws[i, j + m]
            if w == 0.0:
                continue
            dl, lane = divmod(i + j, m)
            (Q, R, P)[dl + 1][i, lane] += w
    return P, Q, R


def _iid(spec: dict, lo: int, hi: int):
    m = int(spec["m"])
    seed = int(spec["seed"])
    jump = spec.get("jump", {})
    L = hi - lo + 1
    P, Q, R = (np.empty((L, m, m)) for _ in range(3))
    for k, n in enumerate(range(lo, hi + 1)):
        gen = rng.stream(seed, n)
        laws = np.array([balanced_jump_law(gen, m, jump) for _ in range(m)])
        P[k], Q[k], R[k] = embed_jump_laws(laws, m)
    return m, P, Q, R


def perturbation_profile(spec: dict, n: np.ndarray) -> np.ndarray:
    kappa = float(spec.get("kappa", 2.0))
    K = float(spec.get("K", 0.0))
    rule = spec.get("rule", "odd")
    if kappa <= 1.0:
        raise NonStochasticSpec(f"decay exponent kappa={kappa} must exceed 1")
    base = K / (np.abs(n) ** kappa + 1.0)
    if rule == "zero" or K == 0.0:
        a = np.zeros(len(n))
    elif rule == "odd":
        a = np.sign(n) * base
    elif rule == "positive":
        a = base
    elif rule == "seeded":
        seed = int(spec["seed"])
        a = np.array([rng.stream(seed, int(k)).uniform(-1.0, 1.0) for k in n]) * base
    else:
        raise ConfigInvalid(f"unknown perturbation rule {rule!r}")
    return a


def _perturbed_srw(spec: dict, lo: int, hi: int):
    n = np.arange(lo, hi + 1)
    a = perturbation_profile(spec, n).astype(float)
    for site, value in spec.get("sites", {}).items():
        site = int(site)
        if lo <= site <= hi:
            a[site - lo] = float(value)
    if np.any(np.abs(a) >= 0.5):
        raise NonStochasticSpec("perturbation |a_n| must stay below 1/2")
    p = 0.5 - a
    q = 0.5 + a
    return 1, p[:, None, None], q[:, None, None], np.zeros((len(n), 1, 1))


_GENERATORS = {
    "quasiperiodic": _quasiperiodic,
    "iid": _iid,
    "perturbed-srw": _perturbed_srw,
}


def build_environment(spec: dict, window: tuple[int, int], width: int | None = None) -> Environment:
    """Environment for generator ``spec`` on layers ``window[0]..window[1]``.

    Optional keys ``lazy`` (holding probability) and ``perturbation`` (keyword
    arguments of :func:`perturb`) are applied after generation.
    """
    lo, hi = (int(x) for x in window)
    if hi <= lo:
        raise ConfigInvalid(f"degenerate window {window}")
    kind = spec.get("kind")
    if kind == "explicit":
        env = load_environment(spec["path"]).restrict((lo, hi))
    elif kind in _GENERATORS:
        m, P, Q, R = _GENERATORS[kind](spec, lo, hi)
        env = Environment(m, (lo, hi), P, Q, R, dict(spec))
    else:
        raise UnknownGeneratorTag(f"unknown generator kind {kind!r}")
    if width is not None and env.width != width:
        raise WidthMismatch(f"generator yields width {env.width}, requested {width}")
    env.check()
    if spec.get("perturbation"):
        env = perturb(env, **spec["perturbation"])
    if spec.get("lazy"):
        env = lazify(env, float(spec["lazy"]))
    return Environment(env.width, env.window, env.P, env.Q, env.R, dict(spec), env.metadata)


def srw_spec() -> dict:
    return {"kind": "perturbed-srw", "K": 0.0, "kappa": 2.0, "rule": "zero"}


def default_quasiperiodic_spec(m: int = 2) -> dict:
    """Symmetric golden-mean spec used throughout the tests and examples."""
    if m != 2:
        gen = np.random.default_rng(m)
        def mat(scale):
            return np.round(scale * gen.uniform(-1, 1, (m, m)), 3).tolist()
        coeffs = {
            "P": {"const": mat(0.4), "terms": [{"k": [1], "cos": mat(0.5), "sin": mat(0.5)}]},
            "R": {"const": mat(0.4), "terms": [{"k": [1], "cos": mat(0.5)}]},
        }
    else:
        coeffs = {
            "P": {"const": [[0.0, -0.5], [-0.3, 0.2]],
                  "terms": [{"k": [1], "cos": [[0.6, -0.2], [0.3, 0.5]], "sin": [[0.4, 0.1], [-0.5, 0.3]]}]},
            "R": {"const": [[0.3, -0.4], [-0.2, 0.1]],
                  "terms": [{"k": [1], "cos": [[0.5, 0.2], [-0.3, 0.4]]}]},
        }
    return {"kind": "quasiperiodic", "m": m, "rotation": [GOLDEN], "base_point": [0.1],
            "symmetric": True, "coefficients": coeffs}


def default_iid_spec(m: int = 2, seed: int = 7) -> dict:
    return {"kind": "iid", "m": m, "seed": seed,
            "jump": {"low": 0.5, "high": 1.5, "stay_low": 0.5, "stay_high": 1.5}}


# operations -----------------------------------------------------------------

def _resolvents(env: Environment) -> tuple[np.ndarray, np.ndarray]:
    eye = np.eye(env.width)
    try:
        M = eye - env.R
        return np.linalg.solve(M, env.P), np.linalg.solve(M, env.Q)
    except np.linalg.LinAlgError as exc:
        raise SingularLayer("I - R_n is singular for some layer") from exc


def _r_power_norms(env: Environment, k0: int) -> np.ndarray:
    return norm(np.linalg.matrix_power(env.R, k0))


def validate_ellipticity(env: Environment, eps_bar: float, k0: int = 1) -> EllipticityReport:
    """Check the three uniform ellipticity bounds at every window layer."""
    if not 0.0 < eps_bar < 1.0 or k0 < 1:
        raise ConfigInvalid("need 0 < eps_bar < 1 and k0 >= 1")
    rnorm = _r_power_norms(env, k0)
    if np.any(rnorm >= 1.0 - 1e-14):
        k = int(np.argmax(rnorm))
        raise SingularLayer(f"R^{k0} has norm {rnorm[k]} at layer {env.layers[k]}")
    exitP, exitQ = _resolvents(env)
    violations = []
    for k, n in enumerate(env.layers):
        if rnorm[k] > 1.0 - eps_bar:
            violations.append((int(n), "R_norm", float(rnorm[k])))
        if exitP[k].min() < eps_bar:
            violations.append((int(n), "P_exit", float(exitP[k].min())))
        if exitQ[k].min() < eps_bar:
            violations.append((int(n), "Q_exit", float(exitQ[k].min())))
    return EllipticityReport(float(eps_bar), int(k0), not violations, violations)


def ellipticity_floor(env: Environment, k0: int = 1) -> float:
    """Largest eps_bar for which :func:`validate_ellipticity` passes."""
    exitP, exitQ = _resolvents(env)
    return float(min(1.0 - _r_power_norms(env, k0).max(), exitP.min(), exitQ.min()))


def env_distance(env1: Environment, env2: Environment, truncation: int) -> float:
    """Truncated metric: sum over |n| <= truncation of the triple distance / 2^|n|."""
    if env1.width != env2.width:
        raise WidthMismatch(f"widths {env1.width} and {env2.width}")
    total = 0.0
    for n in range(-truncation, truncation + 1):
        a, b = env1.layer(n), env2.layer(n)
        total += (norm(a.P - b.P) + norm(a.Q - b.Q) + norm(a.R - b.R)) / 2.0 ** abs(n)
    return total


def lazify(env: Environment, r: float) -> Environment:
    """Hold with probability ``r`` at every step."""
    if not 0.0 < r < 1.0:
        raise ConfigInvalid(f"holding probability {r} outside (0, 1)")
    s = 1.0 - r
    R = s * env.R + r * np.eye(env.width)
    meta = dict(env.metadata)
    meta["lazy"] = 1.0 - (1.0 - meta.get("lazy", 0.0)) * s
    return Environment(env.width, env.window, s * env.P, s * env.Q, R,
                       {"kind": "lazy", "r": r, "of": env.generator}, meta)


def perturb(env: Environment, magnitude: float, decay: float, rule: str = "right",
            seed: int | None = None) -> Environment:
    """Shift mass between P and Q by at most ``magnitude / (|n|^decay + 1)`` per entry.

    Row ``i`` of ``P_n`` is scaled by ``1 + s`` and row ``i`` of ``Q_n`` is
    scaled so that the row sum is unchanged; ``s`` is ``delta_n`` (rule
    ``right``), ``sign(n) delta_n`` (``odd``), ``delta_n`` at n = 0 only
    (``site``) or a seeded uniform multiple of ``delta_n`` (``seeded``).
    """
    if decay <= 1.0:
        raise NonStochasticSpec(f"decay exponent {decay} must exceed 1")
    n = env.layers
    delta = magnitude / (np.abs(n).astype(float) ** decay + 1.0)
    m = env.width
    if rule == "right":
        s = np.repeat(delta[:, None], m, axis=1)
    elif rule == "odd":
        s = np.repeat((np.sign(n) * delta)[:, None], m, axis=1)
    elif rule == "site":
        s = np.where(n == 0, delta, 0.0)[:, None].repeat(m, axis=1)
    elif rule == "seeded":
        if seed is None:
            raise ConfigInvalid("seeded perturbation needs a seed")
        s = np.array([rng.stream(seed, int(k)).uniform(-1.0, 1.0, m) for k in n]) * delta[:, None]
    else:
        raise ConfigInvalid(f"unknown perturbation rule {rule!r}")
    pmass = env.P.sum(axis=2)
    qmass = env.Q.sum(axis=2)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(qmass > 0, s * pmass / qmass, 0.0)
    if np.any(t > 1.0) or np.any(s < -1.0) or np.any((qmass == 0) & (s * pmass != 0)):
        raise NonStochasticSpec("perturbation magnitude pushes entries out of range")
    P = env.P * (1.0 + s)[:, :, None]
    Q = env.Q * (1.0 - t)[:, :, None]
    out = Environment(m, env.window, P, Q, env.R,
                      {"kind": "perturbed", "magnitude": magnitude, "decay": decay, "rule": rule,
                       "seed": seed, "of": env.generator},
                      {**env.metadata, "deviation": np.maximum(np.abs(env.P - P), np.abs(env.Q - Q)).max(axis=(1, 2))})
    out.check()
    return out
