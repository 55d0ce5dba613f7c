"""Command-line entry point.

``stripwalk {validate,analyze,green,experiment,all} --config run.json [--seed S] [--out DIR]``

Stages run in dependency order (environment, hierarchy, harmonic, then
Green comparisons and experiments).  Each stage writes its artifacts before
the next one starts, and a manifest with the config hash, seed and package
versions is written last.  Exit status: 0 all criteria met, 1 a criterion
failed, 2 invalid configuration, 3 numerical or simulation error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import platform
import sys
import time
from importlib import metadata
from pathlib import Path
from typing import Any

import jsonschema

from . import __version__
from . import experiments as ex
from .env import build_environment, validate_ellipticity
from .errors import ConfigInvalid, StripWalkError
from .green import green_compare, green_csv
from .harmonic import beta_and_skew, solve_harmonic, solve_perturbed
from .hierarchy import compute_hierarchy_auto, contraction_certificate, potential, residuals

log = logging.getLogger("stripwalk")

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3

_window = {"type": "array", "items": {"type": "integer"}, "minItems": 2, "maxItems": 2}
_site = {"type": "array", "items": {"type": "integer"}, "minItems": 2, "maxItems": 2}
_ints = {"oneOf": [{"type": "integer", "minimum": 0}, {"type": "array", "items": {"type": "integer", "minimum": 0},
                                                        "minItems": 1}]}
_override = {"type": "object", "properties": {"a": {"type": "number"}, "b": {"type": "number"},
                                              "D": {"type": "number"}}, "additionalProperties": False}
_common = {"n_traj": {"type": "integer", "minimum": 1}, "seed": {"type": "integer"}, "start": _site,
           "override": _override}

_EXPERIMENTS = {
    "clt": {"N": _ints, "t_marks": {"type": "array", "items": {"type": "number"}}, "ks_tol": {"type": "number"},
            "cov_tol": {"type": "number"}},
    "lln": {"N": {"type": "integer"}, "observable": {"type": "string"}, "tol": {"type": "number"},
            "eps": {"type": "number"}},
    "local_time": {"N": _ints, "x": {"type": "number"}, "lane": {"type": "integer"},
                   "mean_tol": {"type": "number"}, "ks_tol": {"type": "number"}},
    "llt": {"N": _ints, "k_rule": {"type": "array", "items": {"type": "number"}},
            "lanes": {"type": "array", "items": {"type": "integer"}}, "tol": {"type": "number"},
            "method": {"enum": ["mc", "exact"]}, "parity": {"type": "boolean"}, "symmetric": {"type": "boolean"}},
    "mixing": {"N": {"type": "array", "items": {"type": "integer"}}, "observable": {"type": "string"},
               "starts": {"type": "array", "items": _site}, "tol": {"type": "number"}},
    "semilocal": {"N": {"type": "integer"}, "gamma": {"type": "number"}, "tol": {"type": "number"}},
    "skew": {"N": {"type": "integer"}, "perturbed": {"type": "object"}, "exit_L": {"type": "integer"},
             "p_tol": {"type": "number"}, "ks_tol": {"type": "number"}, "exit_tol": {"type": "number"}},
}

CONFIG_SCHEMA: dict[str, Any] = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "stripwalk run configuration",
    "type": "object",
    "required": ["environment", "analysis"],
    "additionalProperties": False,
    "properties": {
        "seed": {"type": "integer"},
        "output": {"type": "string"},
        "environment": {"type": "object", "required": ["kind"],
                        "description": "generator spec passed to build_environment"},
        "walk_window": _window,
        "analysis": {"type": "object", "required": ["window"], "additionalProperties": False,
                     "properties": {"window": _window, "buffer": {"type": "integer", "minimum": 1},
                                    "max_buffer": {"type": "integer", "minimum": 1}}},
        "tolerances": {"type": "object", "additionalProperties": False,
                       "properties": {"hierarchy": {"type": "number"}, "residual": {"type": "number"},
                                      "current_spread": {"type": "number"}, "averages": {"type": "number"}}},
        "validate": {"type": "object", "additionalProperties": False,
                     "properties": {"eps_bar": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                                    "k0": {"type": "integer", "minimum": 1}}},
        "potential": {"type": "object", "additionalProperties": False,
                      "properties": {"threshold": {"type": "number"}}},
        "contraction": {"type": "object", "additionalProperties": False,
                        "properties": {"n_pairs": {"type": "integer", "minimum": 1}}},
        "green": {"type": "array", "items": {
            "type": "object", "required": ["a", "b", "start"], "additionalProperties": False,
            "properties": {"a": {"type": "integer"}, "b": {"type": "integer"}, "start": _site,
                           "max_sup_error": {"type": "number"}}}},
        "experiments": {"type": "array", "items": {"oneOf": [
            {"type": "object", "required": ["type"], "additionalProperties": False,
             "properties": {"type": {"const": name}, **_common, **props}}
            for name, props in _EXPERIMENTS.items()]}},
    },
}

COMMAND_STAGES = {
    "validate": ("validate",),
    "analyze": ("validate", "hierarchy", "harmonic"),
    "green": ("hierarchy", "harmonic", "green"),
    "experiment": ("hierarchy", "harmonic", "experiments"),
    "all": ("validate", "hierarchy", "harmonic", "green", "experiments"),
}


class StageError(Exception):
    def __init__(self, stage: str, error: Exception):
        super().__init__(f"stage {stage!r}: {type(error).__name__}: {error}")
        self.stage = stage
        self.error = error


def load_config(path: str | Path) -> dict[str, Any]:
    try:
        with open(path) as fh:
            config = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigInvalid(f"cannot read config {path}: {exc}") from exc
    try:
        jsonschema.validate(config, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigInvalid(f"config invalid at {where}: {exc.message}") from exc
    lo, hi = config["analysis"]["window"]
    if not lo < 0 < hi:
        raise ConfigInvalid("analysis window must straddle layer 0")
    return config


def _dump(obj: Any, path: Path) -> None:
    path.write_text(json.dumps(ex._jsonable(obj), indent=2, sort_keys=True) + "\n")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


class Runner:
    def __init__(self, config: dict[str, Any], out: Path, seed: int):
        self.config = config
        self.out = out
        self.seed = seed
        self.tol = {"hierarchy": 1e-10, "residual": 1e-10, "current_spread": 1e-8, "averages": 0.05,
                    **config.get("tolerances", {})}
        self.results: dict[str, bool] = {}
        self.artifacts: list[str] = []
        self.hier = self.harm = None
        an = config["analysis"]
        self.window = tuple(an["window"])
        self.buffer = int(an.get("buffer", 300))
        self.max_buffer = int(an.get("max_buffer", 3200))

    def write(self, name: str, obj: Any) -> None:
        _dump(obj, self.out / name)
        self.artifacts.append(name)

    def record(self, name: str, passed: bool) -> None:
        self.results[name] = bool(passed)
        log.info("%-28s %s", name, "pass" if passed else "FAIL")

    # stages -------------------------------------------------------------------

    def validate(self) -> None:
        opts = self.config.get("validate", {})
        lo, hi = self.window
        env = build_environment(self.config["environment"], (lo, hi))
        rep = validate_ellipticity(env, float(opts.get("eps_bar", 0.01)), int(opts.get("k0", 1)))
        self.write("validate.json", rep.to_dict())
        self.record("validate", rep.passed)

    def hierarchy(self) -> None:
        self.hier = compute_hierarchy_auto(self.config["environment"], self.window, self.tol["hierarchy"],
                                           self.buffer, self.max_buffer)
        res = residuals(self.hier)
        pot = potential(self.hier, **self.config.get("potential", {}))
        summary = {"analysis_window": list(self.window), "env_window": list(self.hier.env.window),
                   "residuals": res, "diagnostics": {k: v.to_dict() for k, v in self.hier.diagnostics.items()}}
        if "contraction" in self.config:
            summary["contraction"] = contraction_certificate(self.hier, seed=self.seed, **self.config["contraction"])
        self.write("hierarchy.json", summary)
        self.write("potential.json", pot.to_dict())
        self.record("hierarchy", max(res.values()) <= self.tol["residual"])
        self.record("potential", pot.bounded_verdict)

    def harmonic(self) -> None:
        self.harm = solve_harmonic(self.hier, avg_threshold=self.tol["averages"])
        s = self.harm.summary()
        self.write("harmonic.json", s)
        self.harm.to_csv(self.out / "harmonic.csv")
        self.artifacts.append("harmonic.csv")
        worst = max(s[k] for k in ("mart_eq_relative", "rho_eq", "rho_alpha"))
        self.record("harmonic", worst <= self.tol["residual"] and s["current_spread"] <= self.tol["current_spread"])

    def green(self) -> None:
        env = self.hier.env
        for i, g in enumerate(self.config.get("green", [])):
            cmp = green_compare(env, self.harm, int(g["a"]), int(g["b"]), tuple(g["start"]))
            stem = f"green_{i}"
            green_csv(cmp, self.out / f"{stem}.csv")
            self.artifacts.append(f"{stem}.csv")
            rec = {k: v for k, v in cmp.items() if k not in ("exact", "predicted")}
            self.write(f"{stem}.json", rec)
            bound = g.get("max_sup_error")
            self.record(stem, bound is None or cmp["sup_error"] <= bound)

    def experiments(self) -> None:
        walk_window = tuple(self.config.get("walk_window", self.hier.env.window))
        env = build_environment(self.config["environment"], walk_window)
        for i, spec in enumerate(self.config.get("experiments", [])):
            rep = self.run_experiment(env, dict(spec), self.seed + i)
            stem = f"experiment_{i}_{rep.name}"
            self.write(f"{stem}.json", rep.to_dict())
            (self.out / f"{stem}.txt").write_text(rep.to_text() + "\n")
            self.artifacts.append(f"{stem}.txt")
            self.record(stem, rep.passed)

    def run_experiment(self, env, spec: dict[str, Any], default_seed: int) -> ex.ExperimentReport:
        kind = spec.pop("type")
        seed = int(spec.pop("seed", default_seed))
        n_traj = int(spec.pop("n_traj", 1000))
        if "start" in spec:
            spec["start"] = tuple(spec["start"])
        if "observable" in spec:
            spec["obs"] = ex.ObservableSpec(spec.pop("observable"))
        harm = self.harm
        if kind == "clt":
            return ex.clt_experiment(env, harm, spec.pop("N"), n_traj, seed, **spec)
        if kind == "lln":
            return ex.lln_experiment(env, harm, spec.pop("obs", ex.ObservableSpec("one")), spec.pop("N"),
                                     n_traj, seed, **spec)
        if kind == "local_time":
            return ex.local_time_experiment(env, harm, spec.pop("N"), n_traj, seed, **spec)
        if kind == "llt":
            return ex.llt_experiment(env, harm, spec.pop("k_rule", [0.0]), spec.pop("N"), n_traj, seed, **spec)
        if kind == "mixing":
            if "starts" in spec:
                spec["starts"] = [tuple(s) for s in spec["starts"]]
            return ex.mixing_experiment(env, harm, spec.pop("obs", ex.ObservableSpec("one")), spec.pop("N"),
                                        n_traj, seed, **spec)
        if kind == "semilocal":
            return ex.semilocal_experiment(env, harm, spec.pop("gamma"), spec.pop("N"), n_traj, seed, **spec)
        if kind == "skew":
            pert_spec = {**self.config["environment"], **spec.pop("perturbed", {})}
            hp = compute_hierarchy_auto(pert_spec, self.window, self.tol["hierarchy"], self.buffer,
                                        self.max_buffer)
            pharm = solve_perturbed(harm, hp, avg_threshold=self.tol["averages"])
            skew = beta_and_skew(harm, pharm)
            penv = build_environment(pert_spec, env.window)
            spec.pop("override", None)
            rep = ex.skew_experiment(env, penv, harm, pharm, skew, spec.pop("N"), n_traj, seed, **spec)
            rep.statistics["skew_params"] = skew.to_dict()
            return rep
        raise ConfigInvalid(f"unknown experiment type {kind!r}")

    def run(self, stages: tuple[str, ...]) -> int:
        self.out.mkdir(parents=True, exist_ok=True)
        started = time.time()
        status = EXIT_PASS
        error = None
        try:
            for stage in stages:
                try:
                    getattr(self, stage)()
                except ConfigInvalid:
                    raise
                except (ValueError, TypeError, KeyError) as exc:
                    raise ConfigInvalid(f"stage {stage!r}: {exc}") from exc
                except StripWalkError as exc:
                    raise StageError(stage, exc) from exc
            if not all(self.results.values()):
                status = EXIT_FAIL
        except ConfigInvalid as exc:
            status, error = EXIT_CONFIG, f"{type(exc).__name__}: {exc}"
        except StageError as exc:
            status, error = EXIT_NUMERIC, str(exc)
        self.write_manifest(stages, status, error, started)
        if error:
            log.error(error)
        return status

    def write_manifest(self, stages, status, error, started) -> None:
        versions = {"stripwalk": __version__, "python": platform.python_version()}
        for pkg in ("numpy", "scipy", "numba", "jsonschema"):
            try:
                versions[pkg] = metadata.version(pkg)
            except metadata.PackageNotFoundError:
                versions[pkg] = None
        manifest = {
            "config_hash": ex.config_hash(self.config), "seed": self.seed, "stages": list(stages),
            "results": self.results, "exit_status": status, "error": error, "versions": versions,
            "artifacts": {name: _sha256(self.out / name) for name in self.artifacts},
            "started": time.strftime("%Y-%m-%dT%H:%M:%S", time.localtime(started)),
            "elapsed_seconds": time.time() - started,
        }
        _dump(manifest, self.out / "manifest.json")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stripwalk", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMAND_STAGES:
        p = sub.add_parser(name, help=f"run stages: {', '.join(COMMAND_STAGES[name])}")
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--seed", type=int, default=None, help="master seed (overrides the config)")
        p.add_argument("--out", default=None, help="output directory (overrides the config)")
        p.add_argument("-v", "--verbose", action="store_true")
    sub.add_parser("schema", help="print the configuration JSON schema")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "schema":
        print(json.dumps(CONFIG_SCHEMA, indent=2))
        return EXIT_PASS
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        config = load_config(args.config)
    except ConfigInvalid as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    seed = args.seed if args.seed is not None else int(config.get("seed", 0))
    out = Path(args.out or config.get("output", "stripwalk-out"))
    return Runner(config, out, seed).run(COMMAND_STAGES[args.command])


if __name__ == "__main__":
    sys.exit(main())
