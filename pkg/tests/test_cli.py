from __future__ import annotations

import argparse
import json
from pathlib import Path

import pytest

from hierisk import cli
from hierisk.rbsde import optimal_stopping_oracle
from hierisk.presets import american_put


SPECS = Path(__file__).resolve().parents[1] / "specs"


def _run(tmp_path, name, *argv):
    out = tmp_path / name
    code = cli.main([argv[0], "--out", str(out), *argv[1:]])
    return code, out


def _load(path):
    return json.loads(path.read_text())


def test_risk_is_reproducible(tmp_path):
    args = ("risk", "--spec", "preset:abs_z", "--paths", "4000", "--steps", "10", "--seed", "5")
    c1, a = _run(tmp_path, "a", *args)
    c2, b = _run(tmp_path, "b", *args, "--threads", "2")
    assert c1 == c2 == 0
    for name in ("summary.json", "manifest.json", "solution.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    assert abs(_load(a / "summary.json")["y0"] - 0.3) < 0.05


def test_spec_file_and_validate(tmp_path):
    code, out = _run(tmp_path, "v", "validate", "--spec", str(SPECS / "linear_quadratic.json"))
    assert code == 0
    assert _load(out / "summary.json")["admissible"] is True


def test_stackelberg_with_checks(tmp_path):
    code, out = _run(tmp_path, "s", "stackelberg", "--spec", "preset:lq", "--points", "41",
                     "--x-min", "-3", "--x-max", "3", "--grid-steps", "120", "--split", "0.5",
                     "--verify", "--mc-paths", "3000", "--mc-steps", "30")
    assert code == 0
    s = _load(out / "summary.json")
    assert s["dpp"]["max_difference"] == 0.0
    assert {"leader_gap", "follower_gap", "leader_se", "follower_se"} <= set(s["gaps"])
    assert s["acceptability"]["accepted"] is True
    for name in ("leader_value.csv", "follower_value.csv", "policy.csv", "reflection_residual.csv"):
        assert (out / name).exists()


def test_rbsde_oracle(tmp_path):
    code, out = _run(tmp_path, "o", "rbsde", "--spec", "preset:amput", "--method", "oracle", "--tree-steps", "128")
    assert code == 0
    assert _load(out / "summary.json")["value"] == optimal_stopping_oracle(american_put(), 128)


def test_hjb_leader_penalized(tmp_path):
    code, out = _run(tmp_path, "p", "hjb-leader", "--spec", "preset:amput", "--points", "41",
                     "--x-min", "0", "--x-max", "2", "--penalty", "10")
    assert code == 0
    assert (out / "leader_penalized.csv").exists()


def test_failure_writes_error_file(tmp_path):
    code, out = _run(tmp_path, "e", "hjb-follower", "--spec", "preset:lq", "--points", "41",
                     "--x-min", "-3", "--x-max", "3", "--grid-steps", "2")
    assert code == 1
    err = _load(out / "error.json")
    assert err["error"] == "StabilityError"
    assert "steps" in err["message"]
    assert not (out / "summary.json").exists()


def test_unknown_preset(tmp_path):
    code, out = _run(tmp_path, "u", "validate", "--spec", "preset:nope")
    assert code == 1
    assert (out / "error.json").exists()


def test_thread_count_from_environment(monkeypatch):
    ns = argparse.Namespace(threads=3)
    assert cli._threads(ns) == 3
    monkeypatch.setenv("HIERISK_THREADS", "2")
    assert cli._threads(ns) == 2
    monkeypatch.setenv("HIERISK_THREADS", "zero")
    with pytest.raises(cli.HieriskError):
        cli._threads(ns)
