from __future__ import annotations

import csv

import numpy as np
import pytest

from conftest import make_spec
from hierisk.artifacts import export_field, import_field, manifest
from hierisk.fields import PolicyField, ValueField
from hierisk.hjbgrid import make_grids, solve_follower_hjb, solve_leader_obstacle
from hierisk.presets import linear_quadratic
from hierisk.problem import Grids, SpaceGrid, TimeGrid, spec_digest


def test_zero_field_layout(tmp_path):
    grids = Grids(TimeGrid(1, 1.0), SpaceGrid(-1, 1, 3))
    path = export_field(ValueField(grids, np.zeros((2, 3))), tmp_path / "z.csv")
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["t", "x", "value"]
    assert rows[1:] == [
        ["0", "-1", "0"], ["0", "0", "0"], ["0", "1", "0"],
        ["1", "-1", "0"], ["1", "0", "0"], ["1", "1", "0"],
    ]


def test_leader_terminal_slice(tmp_path):
    spec = make_spec(leader_terminal="x")
    grids = make_grids(spec, SpaceGrid(-2, 2, 21))
    _, _, table = solve_follower_hjb(spec, grids)
    lf, _, _ = solve_leader_obstacle(spec, grids, table)
    export_field(lf, tmp_path / "l.csv")
    rows = list(csv.reader(open(tmp_path / "l.csv")))[-21:]
    assert all(float(r[0]) == 1.0 and float(r[2]) == float(r[1]) for r in rows)


def test_value_round_trip_is_bitwise(tmp_path):
    spec = linear_quadratic()
    grids = make_grids(spec, SpaceGrid(-3, 3, 31))
    vf, pol, _ = solve_follower_hjb(spec, grids, 2)
    back = import_field(export_field(vf, tmp_path / "v.csv"))
    assert back.values.tobytes() == vf.values.tobytes()
    assert back.grids == grids
    pback = import_field(export_field(pol, tmp_path / "p.csv"), grids)
    assert np.array_equal(pback.u_index, pol.u_index) and np.array_equal(pback.v_index, pol.v_index)


def test_missing_policy_component(tmp_path):
    grids = Grids(TimeGrid(2, 1.0), SpaceGrid(0, 1, 3))
    pol = PolicyField(grids, u_index=np.ones((2, 3), dtype=np.int64))
    back = import_field(export_field(pol, tmp_path / "p.csv"))
    assert back.v_index is None
    assert np.all(back.u_index == 1)
    assert back.grids == grids


def test_non_finite_field_refused(tmp_path):
    grids = Grids(TimeGrid(1, 1.0), SpaceGrid(-1, 1, 3))
    vals = np.zeros((2, 3))
    vals[0, 1] = np.nan
    with pytest.raises(ValueError):
        export_field(ValueField(grids, vals), tmp_path / "bad.csv")


def test_manifest_records_spec_digest():
    spec = linear_quadratic()
    m = manifest("stackelberg", spec, {"seed": 1})
    assert m["spec_sha256"] == spec_digest(spec)
    assert "threads" not in m["config"]
    assert set(m["versions"]) == {"hierisk", "numpy", "scipy", "python"}
