from __future__ import annotations

import json

import numpy as np
import pytest

from conftest import make_spec
from hierisk.errors import ExprDomainError, InadmissibleSpecError, SpecError
from hierisk.presets import PRESETS, american_put, linear_quadratic
from hierisk.problem import (
    SpaceGrid,
    TimeGrid,
    default_space_grid,
    load_spec,
    require_admissible,
    spec_digest,
    spec_from_dict,
    spec_to_dict,
    validate_spec,
)
from hierisk.sde import simulate_paths

MINIMAL = {
    "horizon": 1,
    "x0": 0.0,
    "drift": "u+v",
    "diffusion": "1",
    "control_grid_u": [-1, 0, 1],
    "control_grid_v": [-1, 0, 1],
}


def _write(tmp_path, doc):
    p = tmp_path / "spec.json"
    p.write_text(json.dumps(doc))
    return p


def test_minimal_spec_loads(tmp_path):
    spec = load_spec(_write(tmp_path, MINIMAL))
    assert spec.state_dim == 1
    assert spec.horizon == 1.0
    grid = TimeGrid(10, spec.horizon)
    assert grid.dt == 0.1
    assert spec.m_u == spec.m_v == 1


def test_empty_control_grid_rejected(tmp_path):
    with pytest.raises(SpecError, match="empty control grid"):
        load_spec(_write(tmp_path, {**MINIMAL, "control_grid_v": []}))


def test_negative_horizon_rejected(tmp_path):
    with pytest.raises(SpecError, match="horizon must be positive"):
        load_spec(_write(tmp_path, {**MINIMAL, "horizon": -1}))


@pytest.mark.parametrize(
    "change, message",
    [
        ({"drift": "u+w"}, "field drift"),
        ({"follower_running_cost": "u^2"}, "not allowed"),
        ({"leader_terminal": "x+t"}, "not allowed"),
        ({"control_grid_u": [0, 0]}, "duplicate"),
        ({"ellipticity_floor": 0}, "ellipticity_floor"),
        ({"drift": "x[2]"}, "exceeds dimension"),
        ({"bogus": 1}, "unknown field"),
    ],
)
def test_invalid_fields(change, message):
    with pytest.raises(SpecError, match=message):
        spec_from_dict({**MINIMAL, **change})


def test_missing_field():
    doc = dict(MINIMAL)
    del doc["drift"]
    with pytest.raises(SpecError, match="missing required"):
        spec_from_dict(doc)


def test_malformed_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(SpecError, match="malformed"):
        load_spec(p)


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_dict_round_trip(name):
    spec = PRESETS[name]()
    again = spec_from_dict(json.loads(json.dumps(spec_to_dict(spec))))
    assert again == spec
    assert spec_digest(again) == spec_digest(spec)


def test_shipped_spec_files_match_presets():
    from pathlib import Path

    root = Path(__file__).resolve().parents[1] / "specs"
    assert load_spec(root / "american_put.json") == american_put()
    assert load_spec(root / "linear_quadratic.json") == linear_quadratic()


def test_parameters_fold_into_expressions():
    spec = make_spec(generator="mu*abs(z)", parameters={"mu": 0.3})
    assert spec.generator_at(0.0, np.zeros(2), np.array([[2.0], [-1.0]])) == pytest.approx([0.6, 0.3])


def test_vector_state_and_controls():
    spec = spec_from_dict({
        "state_dim": 2,
        "horizon": 1.0,
        "x0": [0.0, 1.0],
        "drift": ["u[1]", "v[2]"],
        "diffusion": [["1", "0"], ["0", "2"]],
        "control_grid_u": [[0.0], [1.0]],
        "control_grid_v": [[0.0, 1.0], [1.0, 0.0]],
    })
    m = spec.drift_at(0.0, np.zeros((1, 2)), spec.u_points[[1]], spec.v_points[[0]])
    np.testing.assert_array_equal(m, [[1.0, 1.0]])
    s = spec.diffusion_at(0.0, np.zeros((1, 2)), spec.u_points[[0]], spec.v_points[[0]])
    np.testing.assert_array_equal(s[0], [[1.0, 0.0], [0.0, 2.0]])


# -- validation ------------------------------------------------------------------


def test_constant_diffusion_is_elliptic():
    rep = validate_spec(make_spec(diffusion="1", ellipticity_floor=0.5), 200, 0)
    assert rep.min_eigenvalue == 1.0
    assert rep.admissible


def test_abs_z_flag_check_passes():
    spec = make_spec(generator="0.3*abs(z)",
                     generator_flags={"convex": True, "positively_homogeneous": True, "zero_at_zero_z": True})
    rep = validate_spec(spec, 300, 1)
    assert rep.admissible, rep.violations


def test_zero_diffusion_violates_ellipticity():
    rep = validate_spec(make_spec(diffusion="0", ellipticity_floor=0.1), 200, 0)
    assert not rep.admissible
    assert any("ellipticity floor not met" in v for v in rep.violations)


def test_false_flags_are_reported():
    spec = make_spec(generator="1+z^2",
                     generator_flags={"zero_at_zero_z": True, "positively_homogeneous": True})
    rep = validate_spec(spec, 200, 0)
    text = " ".join(rep.violations)
    assert "zero_at_zero_z" in text and "positively_homogeneous" in text


def test_superlinear_generator_flagged():
    rep = validate_spec(make_spec(generator="z^3"), 400, 0)
    assert any("Lipschitz in z" in v for v in rep.violations)


def test_obstacle_above_terminal_flagged():
    rep = validate_spec(make_spec(leader_terminal="0", obstacle="1"), 200, 0)
    assert any("obstacle exceeds leader terminal" in v for v in rep.violations)


def test_domain_error_reports_point():
    with pytest.raises(ExprDomainError, match="x="):
        validate_spec(make_spec(leader_terminal="log(x)"), 200, 0)


def test_validation_is_deterministic():
    spec = linear_quadratic()
    a = validate_spec(spec, 256, 4).summary()
    b = validate_spec(spec, 256, 4).summary()
    assert a == b


def test_control_overlap_is_only_a_note():
    rep = validate_spec(linear_quadratic(), 200, 0)
    assert rep.admissible
    assert any("share" in n for n in rep.notes)


def test_small_sample_rejected():
    with pytest.raises(SpecError):
        validate_spec(make_spec(), 50, 0)


def test_solvers_reject_inadmissible_specs():
    bad = make_spec(diffusion="0", ellipticity_floor=0.1)
    with pytest.raises(InadmissibleSpecError):
        require_admissible(bad)
    with pytest.raises(InadmissibleSpecError):
        simulate_paths(bad, TimeGrid(4, 1.0), (0, 0), 10, 0)
    ens = simulate_paths(bad, TimeGrid(4, 1.0), (0, 0), 10, 0, override=True)
    assert np.all(ens.X == 0.0)


# -- grids -------------------------------------------------------------------------


def test_time_grid_nodes():
    g = TimeGrid(3, 1.0)
    assert g.times[-1] == 1.0
    assert g.t(3) == 1.0
    assert g.index_of(1 / 3) == 1
    with pytest.raises(SpecError):
        g.index_of(0.5)


def test_space_grid_rules():
    with pytest.raises(SpecError):
        SpaceGrid(0.0, 1.0, 4)
    with pytest.raises(SpecError):
        SpaceGrid(1.0, 0.0, 5)
    g = SpaceGrid.around(1.0, 1.0, 5)
    np.testing.assert_allclose(g.nodes, [0.0, 0.5, 1.0, 1.5, 2.0])
    assert g.contains_on_node(1.0)


def test_default_space_grid_six_sigma():
    g = default_space_grid(linear_quadratic(), 201)
    assert (g.x_min, g.x_max) == (-6.0, 6.0)
    assert g.nodes[100] == 0.0
