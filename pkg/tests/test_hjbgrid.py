from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest

from conftest import make_spec
from hierisk.errors import PreconditionError, StabilityError
from hierisk.fields import ValueField
from hierisk.hjbgrid import (
    apply_generator,
    check_cfl,
    make_grids,
    max_stable_dt,
    obstacle_complementarity,
    pde_residual,
    penalized_obstacle_sweep,
    solve_follower_hjb,
    solve_leader_obstacle,
    stencil_weights,
)
from hierisk.presets import american_put, constant_cost, gaussian_heat, linear_quadratic
from hierisk.problem import Grids, SpaceGrid, TimeGrid
from hierisk.rbsde import optimal_stopping_oracle


def _field_from(fn, grids):
    x = grids.space.nodes
    vals = np.tile(fn(x), (grids.time.n_steps + 1, 1))
    return ValueField(grids, vals)


# -- generator and stencil ---------------------------------------------------------


def test_generator_on_affine_function():
    spec = make_spec(drift="0.5", diffusion="2")
    g = Grids(TimeGrid(4, 1.0), SpaceGrid(-1, 1, 21))
    f = _field_from(lambda x: 3 * x + 1, g)
    assert apply_generator(spec, f, 0, 10, 0.0, 0.0) == pytest.approx(1.5, abs=1e-12)


def test_generator_on_square():
    spec = make_spec()
    g = Grids(TimeGrid(4, 1.0), SpaceGrid(-1, 1, 21))
    f = _field_from(lambda x: x * x, g)
    assert apply_generator(spec, f, 0, 10, 0.0, 0.0) == pytest.approx(1.0, abs=1e-12)


def test_generator_upwinds_the_drift():
    spec = make_spec(drift="-2", diffusion="0.001")
    g = Grids(TimeGrid(4, 1.0), SpaceGrid(-1, 1, 21))
    f = _field_from(lambda x: x * x, g)
    dx = g.space.dx
    j = 15  # x = 0.5: backward difference of x^2 is 1 - dx
    expected = 0.5 * 1e-6 * 2 - 2 * (1 - dx)
    assert apply_generator(spec, f, 0, j, 0.0, 0.0) == pytest.approx(expected, abs=1e-10)


def test_generator_rejects_boundary_nodes():
    spec = make_spec()
    g = Grids(TimeGrid(4, 1.0), SpaceGrid(-1, 1, 21))
    f = _field_from(np.sin, g)
    with pytest.raises(PreconditionError):
        apply_generator(spec, f, 0, 0, 0.0, 0.0)


@pytest.mark.parametrize("factory", [linear_quadratic, constant_cost, american_put])
def test_stencil_weights_are_a_probability_split(factory):
    spec = factory()
    space = SpaceGrid(0.0, 2.0, 101) if factory is american_put else SpaceGrid(-3, 3, 61)
    grids = make_grids(spec, space)
    wm, w0, wp = stencil_weights(spec, grids)
    assert min(wm.min(), w0.min(), wp.min()) >= 0.0
    np.testing.assert_allclose(wm + w0 + wp, 1.0, atol=1e-13)


def test_cfl_violation_reports_required_steps():
    spec = linear_quadratic()
    space = SpaceGrid(-3, 3, 61)
    need = make_grids(spec, space).time.n_steps
    with pytest.raises(StabilityError, match=f"at least {need} steps"):
        check_cfl(spec, Grids(TimeGrid(need // 2, 1.0), space))
    assert max_stable_dt(spec, space) * need >= 1.0 - 1e-12


# -- follower -----------------------------------------------------------------------


def test_constant_cost_value():
    spec = constant_cost()
    grids = make_grids(spec, SpaceGrid(-3, 3, 61))
    vf, pol, table = solve_follower_hjb(spec, grids)
    tau = grids.time.horizon - grids.time.times
    np.testing.assert_allclose(vf.values, np.repeat(tau[:, None], 61, axis=1), atol=1e-12)
    assert np.all(pol.v_index == 0)  # ties resolve to the lowest index
    assert table.table.shape == (grids.time.n_steps, 61, 1)


def test_quadratic_control_cost_picks_zero():
    spec = make_spec(drift="v", control_grid_v=[[-1.0], [0.0], [1.0]], follower_running_cost="v^2")
    grids = make_grids(spec, SpaceGrid(-3, 3, 31))
    vf, pol, _ = solve_follower_hjb(spec, grids)
    assert np.all(pol.v_index == 1)
    assert np.max(np.abs(vf.values)) == 0.0


def test_follower_terminal_slice_is_exact():
    spec = gaussian_heat()
    grids = make_grids(spec, SpaceGrid(-6, 6, 81))
    vf, _, _ = solve_follower_hjb(spec, grids)
    x = grids.space.nodes
    assert vf.values[-1].tobytes() == np.exp(-x**2 / 2).tobytes()


def test_heat_equation_accuracy():
    spec = gaussian_heat()
    grids = make_grids(spec, SpaceGrid(-8, 8, 161))
    vf, _, _ = solve_follower_hjb(spec, grids)
    exact = 1 / np.sqrt(2.0)
    assert abs(vf.at(0, 0.0) - exact) <= 5e-3


def test_k_range_leaves_other_slices_empty():
    spec = constant_cost()
    grids = make_grids(spec, SpaceGrid(-3, 3, 61), multiple_of=2)
    N = grids.time.n_steps
    full, _, _ = solve_follower_hjb(spec, grids)
    part, _, _ = solve_follower_hjb(spec, grids, k_range=(0, N // 2), terminal=full.values[N // 2])
    assert np.all(np.isnan(part.values[N // 2 + 1 :]))
    assert part.values[0].tobytes() == full.values[0].tobytes()


# -- leader with obstacle --------------------------------------------------------------


def test_inactive_obstacle_equals_unconstrained():
    spec = replace(linear_quadratic(), obstacle="-1e6", leader_terminal="x^2")
    grids = make_grids(spec, SpaceGrid(-3, 3, 61))
    _, _, table = solve_follower_hjb(spec, grids)
    lf, _, res = solve_leader_obstacle(spec, grids, table)
    pen = penalized_obstacle_sweep(spec, grids, table, 0.0)
    assert np.max(np.abs(lf.values - pen.values)) == 0.0
    assert np.all(res.values == 0.0)


def test_constant_obstacle_equal_to_terminal():
    spec = make_spec(obstacle="0.4", leader_terminal="0.4")
    grids = make_grids(spec, SpaceGrid(-2, 2, 41))
    _, _, table = solve_follower_hjb(spec, grids)
    lf, _, res = solve_leader_obstacle(spec, grids, table)
    np.testing.assert_allclose(lf.values, 0.4, atol=1e-14)
    assert np.max(res.values) <= 1e-14


@pytest.fixture(scope="module")
def put_grid():
    spec = american_put()
    grids = make_grids(spec, SpaceGrid(0.0, 2.0, 101))
    _, pol, table = solve_follower_hjb(spec, grids)
    lf, lpol, res = solve_leader_obstacle(spec, grids, table)
    return spec, grids, table, lf, lpol, res


def test_put_matches_tree(put_grid):
    spec, grids, _, lf, _, _ = put_grid
    oracle = optimal_stopping_oracle(spec, 512)
    assert abs(lf.at(0, 1.0) - oracle) <= 0.01 * oracle


def test_projection_complementarity_is_exact(put_grid):
    spec, grids, _, lf, _, res = put_grid
    assert obstacle_complementarity(lf, res, spec) == 0.0
    h = np.maximum(1.0 - grids.space.nodes, 0.0)
    assert np.all(lf.values >= h)


def test_penalty_monotone_and_bounded(put_grid):
    spec, grids, table, lf, _, _ = put_grid
    top = 1.0 / grids.time.dt
    vals = [penalized_obstacle_sweep(spec, grids, table, n).at(0, 1.0) for n in (0.0, 10.0, 100.0, top)]
    assert all(b >= a for a, b in zip(vals, vals[1:]))
    assert vals[-1] == pytest.approx(lf.at(0, 1.0), abs=1e-14)
    with pytest.raises(StabilityError):
        penalized_obstacle_sweep(spec, grids, table, 2 * top)


def test_obstacle_above_terminal_rejected():
    spec = make_spec(obstacle="1", leader_terminal="0")
    grids = make_grids(spec, SpaceGrid(-1, 1, 21))
    _, _, table = solve_follower_hjb(spec, grids, override=True)
    with pytest.raises(PreconditionError):
        solve_leader_obstacle(spec, grids, table, override=True)


# -- residuals -----------------------------------------------------------------------


def _heat_residual(n_points):
    spec = gaussian_heat()
    grids = make_grids(spec, SpaceGrid(-8, 8, n_points))
    vf, pol, _ = solve_follower_hjb(spec, grids)
    return pde_residual(vf, spec, grids, pol).max_residual


def test_heat_residual_shrinks_with_refinement():
    r = [_heat_residual(m) for m in (81, 161)]
    assert r[1] < 0.6 * r[0]


def test_constant_cost_residual_vanishes():
    spec = constant_cost()
    grids = make_grids(spec, SpaceGrid(-3, 3, 61))
    vf, pol, _ = solve_follower_hjb(spec, grids)
    assert pde_residual(vf, spec, grids, pol).max_residual <= 1e-10


def test_leader_residual_reports_contact(put_grid):
    spec, grids, table, lf, lpol, _ = put_grid
    rep = pde_residual(lf, spec, grids, lpol, "leader", table, contact_margin=0.01)
    assert rep.n_contact > 0
    assert rep.n_interior > 0
    assert set(rep.summary()) >= {"max_residual", "max_contact_gap"}


@pytest.mark.xfail(strict=True, reason=(
    "off the contact band the put value is smooth only away from the free boundary; "
    "the non-contact set crowds towards the kink as dx shrinks, so the leader "
    "residual grows (about 1.1e-5, 1.6e-5, 2.3e-5 for M = 401, 567, 801)"))
def test_put_leader_residual_decreases_under_refinement():
    spec = american_put()
    out = []
    for m in (401, 801):
        grids = make_grids(spec, SpaceGrid(0.0, 2.0, m))
        _, _, table = solve_follower_hjb(spec, grids)
        lf, lpol, _ = solve_leader_obstacle(spec, grids, table)
        out.append(pde_residual(lf, spec, grids, lpol, "leader", table).max_residual)
    assert out[1] < out[0]
