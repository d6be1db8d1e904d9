from __future__ import annotations

import csv
from dataclasses import replace

import numpy as np
import pytest

from conftest import make_spec
from hierisk.bsde import solve_bsde
from hierisk.errors import PreconditionError, StabilityError
from hierisk.presets import abs_z_driver, american_put
from hierisk.problem import TimeGrid
from hierisk.rbsde import (
    export_reflected_csv,
    optimal_stopping_oracle,
    reflection_diagnostics,
    solve_penalized,
    solve_reflected,
    stability_probe,
)
from hierisk.sde import simulate_paths


@pytest.fixture(scope="module")
def put_run():
    spec = american_put()
    ens = simulate_paths(spec, TimeGrid(50, 1.0), (0, 0), 40_000, 5)
    xi = spec.leader_terminal_at(ens.X[:, -1, :])
    return spec, ens, xi


@pytest.fixture(scope="module")
def oracle_512():
    return optimal_stopping_oracle(american_put(), 512)


def test_inactive_obstacle_matches_plain_bsde():
    spec = replace(abs_z_driver(0.3), obstacle="-1000")
    ens = simulate_paths(spec, TimeGrid(20, 1.0), (0, 0), 10_000, 2)
    xi = np.sin(ens.X[:, -1, 0])
    ref = solve_reflected(spec, ens, xi, basis="spline")
    plain = solve_bsde(spec, ens, xi, basis="spline")
    assert np.max(np.abs(ref.Y - plain.Y)) <= 1e-12
    assert np.all(ref.A == 0.0)


def test_constant_obstacle_and_terminal():
    spec = make_spec(obstacle="0.7", leader_terminal="0.7")
    ens = simulate_paths(spec, TimeGrid(16, 1.0), (0, 0), 2_000, 0)
    sol = solve_reflected(spec, ens, np.full(ens.n_paths, 0.7))
    np.testing.assert_allclose(sol.Y, 0.7, atol=1e-12)
    assert np.max(sol.A) <= 1e-12


def test_put_close_to_tree(put_run, oracle_512):
    spec, ens, xi = put_run
    sol = solve_reflected(spec, ens, xi)
    assert abs(sol.y0 - oracle_512) <= 0.01 * oracle_512
    assert np.all(np.diff(sol.A, axis=1) >= 0.0)
    assert np.all(sol.Y >= sol.obstacle - 1e-12)


def test_penalty_zero_is_plain_bsde(put_run):
    spec, ens, xi = put_run
    pen = solve_penalized(spec, ens, xi, n_penalty=0.0)
    plain = solve_bsde(spec, ens, xi, basis="spline")
    assert np.max(np.abs(pen.Y - plain.Y)) <= 1e-12


def test_penalized_values_increase_with_n(put_run):
    spec, ens, xi = put_run
    y = [solve_penalized(spec, ens, xi, n_penalty=n).y0 for n in (1.0, 4.0, 16.0, 50.0)]
    assert all(b >= a for a, b in zip(y, y[1:]))
    assert y[-1] <= solve_reflected(spec, ens, xi).y0 + 1e-12


def test_full_penalty_equals_projection(put_run):
    spec, ens, xi = put_run
    pen = solve_penalized(spec, ens, xi, n_penalty=50.0)  # dt * n = 1
    ref = solve_reflected(spec, ens, xi)
    assert abs(pen.y0 - ref.y0) <= 1e-12


def test_penalty_stability_guard(put_run):
    spec, ens, xi = put_run
    with pytest.raises(StabilityError, match="100 time steps"):
        solve_penalized(spec, ens, xi, n_penalty=100.0)


def test_terminal_below_obstacle_rejected(put_run):
    spec, ens, xi = put_run
    with pytest.raises(PreconditionError):
        solve_reflected(spec, ens, xi - 0.01)


# -- tree oracle --------------------------------------------------------------------


def test_oracle_inactive_obstacle_is_european():
    from scipy.stats import norm

    spec = replace(american_put(), obstacle="-1")
    # Zero rate Black-Scholes put with S = K = 1, vol 0.2, T = 1.
    bs = 2 * norm.cdf(0.1) - 1
    assert optimal_stopping_oracle(spec, 1024) == pytest.approx(bs, abs=2e-4)


def test_oracle_constant_case():
    spec = make_spec(obstacle="0.3", leader_terminal="0.3")
    assert optimal_stopping_oracle(spec, 64) == pytest.approx(0.3, abs=1e-14)


def test_oracle_converges(oracle_512):
    fine = optimal_stopping_oracle(american_put(), 1024)
    assert abs(fine - oracle_512) <= 0.002 * fine
    assert fine == pytest.approx(0.0796, abs=5e-4)


def test_oracle_rejects_y_dependent_driver():
    with pytest.raises(PreconditionError):
        optimal_stopping_oracle(make_spec(generator="0.1*y"), 16)


# -- diagnostics --------------------------------------------------------------------


@pytest.mark.parametrize("seed", [1, 2])
def test_diagnostics_on_put(seed):
    spec = american_put()
    ens = simulate_paths(spec, TimeGrid(128, 1.0), (0, 0), 100_000, seed)
    xi = spec.leader_terminal_at(ens.X[:, -1, :])
    sol = solve_reflected(spec, ens, xi)
    rep = reflection_diagnostics(sol, spec, ens)
    assert rep.max_obstacle_violation <= 1e-12
    assert rep.max_complementarity <= 1e-10
    assert rep.increment_discrepancy <= 5e-2 * rep.scale
    assert set(rep.summary()) >= {"increment_discrepancy", "max_abs_y"}


def test_stability_probe_shrinks(put_run):
    spec, ens, xi = put_run
    rep = stability_probe(spec, ens, {"d_xi": 0.05, "d_obstacle": 0.02}, xi, halvings=3)
    assert rep.scales == [1.0, 0.5, 0.25, 0.125]
    assert rep.monotone
    assert rep.sup_dy[-1] < rep.sup_dy[0]


def test_stability_probe_zero_perturbation(put_run):
    spec, ens, xi = put_run
    rep = stability_probe(spec, ens, {}, xi, halvings=1)
    assert rep.sup_dy == [0.0, 0.0]
    assert rep.monotone


def test_export_reflected(tmp_path, put_run):
    spec, ens, xi = put_run
    sol = solve_reflected(spec, ens, xi)
    out = tmp_path / "r.csv"
    export_reflected_csv(sol, ens, out)
    rows = list(csv.reader(open(out)))
    assert rows[0] == ["step", "t", "y_mean", "a_mean"]
    assert float(rows[1][3]) == 0.0
    assert len(rows) == ens.n_steps + 2
