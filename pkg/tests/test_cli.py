"""Configuration-driven runs through the command-line entry point."""
from __future__ import annotations

import json
from pathlib import Path

import pytest

from stripwalk.cli import CONFIG_SCHEMA, main

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

SRW = {"kind": "perturbed-srw", "K": 0.0, "kappa": 2.0, "rule": "zero"}


def write(tmp_path: Path, config: dict) -> str:
    path = tmp_path / "run.json"
    path.write_text(json.dumps(config))
    return str(path)


def run(tmp_path: Path, command: str, config: dict, *extra: str) -> tuple[int, Path]:
    out = tmp_path / "out"
    code = main([command, "--config", write(tmp_path, config), "--out", str(out), *extra])
    return code, out


def test_validate_only(tmp_path):
    code, out = run(tmp_path, "validate", {"environment": SRW, "analysis": {"window": [-50, 50]}})
    assert code == 0
    reports = sorted(p.name for p in out.iterdir() if p.name != "manifest.json")
    assert reports == ["validate.json"]
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["exit_status"] == 0 and "config_hash" in manifest


def analysis_config():
    return {"seed": 5, "environment": {**SRW, "lazy": 0.5},
            "analysis": {"window": [-200, 200], "buffer": 100}, "walk_window": [-800, 800],
            "green": [{"a": -40, "b": 40, "start": [0, 0], "max_sup_error": 1e-8}],
            "experiments": [{"type": "llt", "N": 400, "k_rule": [0, 1], "method": "exact"},
                            {"type": "clt", "N": 400, "n_traj": 2000}]}


def test_all_stages_deterministic(tmp_path):
    (tmp_path / "a").mkdir()
    (tmp_path / "b").mkdir()
    code1, out1 = run(tmp_path / "a", "all", analysis_config())
    code2, out2 = run(tmp_path / "b", "all", analysis_config())
    assert code1 == code2 == 0
    names = sorted(p.name for p in out1.iterdir() if p.name != "manifest.json")
    assert names == sorted(p.name for p in out2.iterdir() if p.name != "manifest.json")
    assert {"hierarchy.json", "harmonic.json", "green_0.json"} <= set(names)
    for name in names:
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes(), name


def test_negative_control_fails(tmp_path):
    cfg = analysis_config()
    cfg["experiments"] = [{"type": "clt", "N": 900, "n_traj": 5000, "override": {"D": 1.0}}]
    code, out = run(tmp_path, "experiment", cfg)
    assert code == 1
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["exit_status"] == 1


def test_seed_flag_overrides_config(tmp_path):
    cfg = analysis_config()
    cfg["experiments"] = [{"type": "clt", "N": 100, "n_traj": 500}]
    code, out = run(tmp_path, "experiment", cfg, "--seed", "99")
    assert code == 0
    assert json.loads((out / "manifest.json").read_text())["seed"] == 99


@pytest.mark.parametrize("bad", [
    {"environment": SRW, "analysis": {"window": [-50, 50]}, "unexpected": 1},
    {"analysis": {"window": [-50, 50]}},
    {"environment": {"kind": "no-such-generator"}, "analysis": {"window": [-50, 50]}},
    {"environment": SRW, "analysis": {"window": [-50, 50]}, "experiments": [{"type": "clt", "bogus": 1}]},
])
def test_bad_config_exits_2(tmp_path, bad):
    code, _ = run(tmp_path, "validate", bad)
    assert code == 2


def test_unreadable_config_exits_2(tmp_path):
    assert main(["validate", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path)]) == 2
    (tmp_path / "broken.json").write_text("{not json")
    assert main(["validate", "--config", str(tmp_path / "broken.json"), "--out", str(tmp_path)]) == 2


def test_schema_command(capsys):
    assert main(["schema"]) == 0
    assert json.loads(capsys.readouterr().out) == CONFIG_SCHEMA


def test_shipped_schema_is_current():
    shipped = Path(__file__).resolve().parents[1] / "docs" / "config.schema.json"
    assert json.loads(shipped.read_text()) == CONFIG_SCHEMA


@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.json")), ids=lambda p: p.name)
def test_shipped_configs_validate(tmp_path, path):
    out = tmp_path / "out"
    assert main(["validate", "--config", str(path), "--out", str(out)]) == 0
