"""Desk-scale acceptance checks, shared by the test suite and ``hierisk suite``.

Every check returns a :class:`CriterionResult` with the measured numbers, so a
failure shows how far off it was.  Seeds and sizes are fixed; each check is
sized to run well under two minutes on one core.
"""

from __future__ import annotations

import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import hierarchy, hjbgrid
from .bsde import check_axioms, check_comparison, solve_bsde
from .presets import abs_z_driver, american_put, constant_cost, gaussian_heat, linear_quadratic
from .problem import Grids, SpaceGrid, TimeGrid, default_space_grid
from .rbsde import optimal_stopping_oracle, reflection_diagnostics, solve_penalized, solve_reflected
from .sde import simulate_paths


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool
    details: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self) -> str:
        return f"criterion {self.number:2d} [{'PASS' if self.passed else 'FAIL'}] {self.title} ({self.seconds:.1f}s)"


def _payoff_pair(rng: np.random.Generator, x: np.ndarray):
    """Two smooth payoffs of X_T with random coefficients."""
    def one():
        a, b, c, w = rng.normal(size=4)
        return a + b * x + c * np.tanh(2.0 * x) + 0.5 * w * np.cos(x)
    return one(), one()


# 1 ---------------------------------------------------------------------------------------


def criterion_1(n_pairs: int = 20, n_paths: int = 40_000, n_steps: int = 50, seed: int = 11) -> CriterionResult:
    spec = abs_z_driver(0.3)
    ens = simulate_paths(spec, TimeGrid(n_steps, spec.horizon), (0, 0), n_paths, seed)
    x = ens.X[:, -1, 0]
    rng = np.random.default_rng(seed)
    fails = []
    worst = {"p1": -np.inf, "p2": -np.inf, "p3": 0.0, "p4": -np.inf, "p5": 0.0}
    for i in range(n_pairs):
        xi, other = _payoff_pair(rng, x)
        nu = float(rng.normal() * 2)
        lam = float(rng.uniform(0.1, 0.9))
        rep = check_axioms(spec, ens, xi, other, nu=nu, lam=lam)
        for r in rep.results:
            if r.status == "fail":
                fails.append((i, r.name, r.lhs, r.rhs, r.tolerance))
            if r.name in ("p3", "p5"):
                worst[r.name] = max(worst[r.name], abs(r.lhs - r.rhs))
            elif r.name == "p1":
                worst["p1"] = max(worst["p1"], (r.lhs - r.rhs) / r.tolerance)
            elif r.name == "p2":
                worst["p2"] = max(worst["p2"], (r.rhs - r.lhs) / r.tolerance)
            elif r.name == "p4":
                worst["p4"] = max(worst["p4"], abs(r.lhs - r.rhs) / r.tolerance)
    return CriterionResult(1, "g-expectation axioms", not fails,
                           {"failures": fails, "worst_in_tolerance_units_or_abs": worst})


# 2 ---------------------------------------------------------------------------------------


def criterion_2(n_paths: int = 100_000, n_steps: int = 20, seed: int = 5) -> CriterionResult:
    spec = gaussian_heat().replace(x0=(0.7,))
    ens = simulate_paths(spec, TimeGrid(n_steps, spec.horizon), (0, 0), n_paths, seed)
    sol = solve_bsde(spec, ens, ens.X[:, -1, 0], driver="0")
    err = abs(sol.y0 - 0.7)
    return CriterionResult(2, "classical expectation reduction", err <= 3 * sol.std_error,
                           {"y0": sol.y0, "error": err, "std_error": sol.std_error})


# 3 ---------------------------------------------------------------------------------------

LADDER = ((25, 10_000), (50, 40_000), (100, 160_000))


def criterion_3(seeds=(0, 1, 2, 3)) -> CriterionResult:
    """Headline check on seed 0 at the top level; the ladder uses RMS error over seeds."""
    spec = abs_z_driver(0.3)
    rms = []
    headline = None
    for n_steps, n_paths in LADDER:
        errs = []
        for s in seeds:
            ens = simulate_paths(spec, TimeGrid(n_steps, 1.0), (0, 0), n_paths, s)
            y0 = solve_bsde(spec, ens, ens.X[:, -1, 0]).y0
            errs.append(y0 - 0.3)
            if (n_steps, n_paths) == LADDER[-1] and s == seeds[0]:
                headline = y0
            del ens
        rms.append(float(np.sqrt(np.mean(np.square(errs)))))
    decreasing = all(b < a for a, b in zip(rms, rms[1:]))
    ok = abs(headline - 0.3) <= 2e-2 and decreasing
    return CriterionResult(3, "closed-form BSDE with g = 0.3|z|", ok,
                           {"y0_top_level": headline, "rms_error_ladder": rms, "ladder": LADDER})


# 4 ---------------------------------------------------------------------------------------


def criterion_4(n_pairs: int = 100, seed: int = 21) -> CriterionResult:
    rng = np.random.default_rng(seed)
    # grid solver: ordered terminal and running costs for the follower
    base = constant_cost()
    grid_min = np.inf
    grids = None
    for _ in range(n_pairs):
        a, b, c = map(float, rng.normal(size=3))
        d1, d2 = map(float, rng.uniform(0, 1, 2))
        mu2 = float(rng.uniform(0, 0.5))
        mu1 = mu2 + float(rng.uniform(0, 0.5))
        term2 = f"{a!r}*x/sqrt(1+x^2)+{b!r}*exp(-x^2)"
        term1 = f"{term2}+{d1!r}*pos(x-{c!r})+{d2!r}"
        cost2 = "v^2+0.5*x^2"
        cost1 = f"{cost2}+{d2!r}*abs(x)"
        s1 = base.replace(follower_terminal=term1, follower_running_cost=cost1, generator=f"{mu1!r}*abs(z)")
        s2 = base.replace(follower_terminal=term2, follower_running_cost=cost2, generator=f"{mu2!r}*abs(z)")
        if grids is None:
            grids = hjbgrid.make_grids(s1, SpaceGrid(-4.0, 4.0, 81))
        v1, _, _ = hjbgrid.solve_follower_hjb(s1, grids, 0, override=True)
        v2, _, _ = hjbgrid.solve_follower_hjb(s2, grids, 0, override=True)
        grid_min = min(grid_min, float(np.min(v1.values - v2.values)))

    spec = abs_z_driver(0.3)
    ens = simulate_paths(spec, TimeGrid(20, 1.0), (0, 0), 10_000, seed)
    x = ens.X[:, -1, 0]
    worst_units = -np.inf
    mc_fail = 0
    for _ in range(n_pairs):
        xi2, _ = _payoff_pair(rng, x)
        xi1 = xi2 + rng.uniform(0, 1) * np.maximum(x - rng.normal(), 0.0) + rng.uniform(0, 0.2)
        mu2 = float(rng.uniform(0, 0.5))
        mu1 = mu2 + float(rng.uniform(0, 0.5))
        k = float(rng.uniform(0, 0.3))
        rep = check_comparison(spec, ens, (xi1, f"{mu1!r}*abs(z)+{k!r}"), (xi2, f"{mu2!r}*abs(z)"), basis="spline")
        worst_units = max(worst_units, -rep.min_difference / rep.std_error)
        mc_fail += rep.violated
    ok = grid_min >= -1e-8 and mc_fail == 0
    return CriterionResult(4, "comparison on ordered pairs", ok,
                           {"grid_min_difference": grid_min, "mc_violations": mc_fail,
                            "mc_worst_negative_in_se": worst_units})


# 5 ---------------------------------------------------------------------------------------


def criterion_5(n_paths: int = 100_000, n_steps: int = 256, seed: int = 3) -> CriterionResult:
    spec = american_put()
    ens = simulate_paths(spec, TimeGrid(n_steps, spec.horizon), (0, 0), n_paths, seed)
    xi = spec.leader_terminal_at(ens.X[:, -1, :])
    refl = solve_reflected(spec, ens, xi).y0
    pens = [solve_penalized(spec, ens, xi, n_penalty=n).y0 for n in (4, 16, 64, 256)]
    tree = optimal_stopping_oracle(spec, 512)
    vals = {"reflected": refl, "penalized_256": pens[-1], "tree_512": tree}
    names = list(vals)
    rel = {f"{a}/{b}": abs(vals[a] - vals[b]) / abs(vals[b]) for i, a in enumerate(names) for b in names[i + 1:]}
    mono = all(b >= a - 1e-10 for a, b in zip(pens, pens[1:]))
    ok = all(r <= 0.01 for r in rel.values()) and mono
    return CriterionResult(5, "reflected / penalized / tree agreement", ok,
                           {**vals, "penalized": pens, "relative_gaps": rel, "monotone": mono})


# 6 ---------------------------------------------------------------------------------------


def criterion_6(n_paths: int = 100_000, steps=(16, 32), seed: int = 1) -> CriterionResult:
    spec = american_put()
    comp_ok = True
    disc = []
    comps = []
    for n in steps:
        ens = simulate_paths(spec, TimeGrid(n, spec.horizon), (0, 0), n_paths, seed)
        sol = solve_reflected(spec, ens, spec.leader_terminal_at(ens.X[:, -1, :]))
        d = reflection_diagnostics(sol, spec, ens)
        comp_ok &= d.max_complementarity <= 1e-6 * d.scale
        comps.append(d.max_complementarity)
        disc.append(d.increment_discrepancy)
    ratio = disc[0] / disc[1]
    return CriterionResult(6, "complementarity and running-supremum increment", comp_ok and ratio >= 1.5,
                           {"steps": steps, "complementarity": comps, "discrepancy": disc, "ratio": ratio})


# 7 ---------------------------------------------------------------------------------------


def criterion_7() -> CriterionResult:
    spec = american_put()
    grids = hjbgrid.make_grids(spec, SpaceGrid(0.0, 2.0, 201))
    fv, _, table = hjbgrid.solve_follower_hjb(spec, grids)
    lead, _, _ = hjbgrid.solve_leader_obstacle(spec, grids, table, fv)
    prev = None
    mono = True
    worst_drop = 0.0
    for n in (4, 16, 64, 256):
        cur = hjbgrid.penalized_obstacle_sweep(spec, grids, table, n).values
        if prev is not None:
            drop = float(np.min(cur - prev))
            worst_drop = min(worst_drop, drop)
            mono &= drop >= -1e-10
        prev = cur
    gap = float(np.max(np.abs(prev - lead.values)))
    above = float(np.max(prev - lead.values))
    return CriterionResult(7, "penalized obstacle sweep", mono and gap <= 1e-2 and above <= 1e-10,
                           {"n_steps": grids.time.n_steps, "sup_gap_256": gap, "worst_decrease": worst_drop,
                            "max_above_projected": above})


# 8 ---------------------------------------------------------------------------------------


def criterion_8() -> CriterionResult:
    lq = linear_quadratic()
    g = hjbgrid.make_grids(lq, default_space_grid(lq, 201), multiple_of=2)
    sol = hierarchy.stackelberg_solve(lq, g)
    d_lq = hierarchy.dpp_check(lq, g, sol, 0.5 * lq.horizon).max_difference
    cc = constant_cost()
    g2 = hjbgrid.make_grids(cc, SpaceGrid(-3.0, 3.0, 61), multiple_of=2)
    sol2 = hierarchy.stackelberg_solve(cc, g2)
    rep = hierarchy.dpp_check(cc, g2, sol2, 0.5 * cc.horizon)
    exact = float(np.max(np.abs(rep.recomposed.values - (cc.horizon - g2.time.times)[:, None])))
    return CriterionResult(8, "dynamic programming split at T/2", d_lq <= 2e-2 and exact <= 1e-12,
                           {"lq_max_difference": d_lq, "constant_cost_vs_T_minus_t": exact,
                            "constant_cost_vs_direct": rep.max_difference})


# 9 ---------------------------------------------------------------------------------------


def criterion_9(n_paths: int = 20_000, mc_steps: int = 100, seed: int = 1) -> CriterionResult:
    spec = linear_quadratic()
    g = hjbgrid.make_grids(spec, default_space_grid(spec, 201))
    sol = hierarchy.stackelberg_solve(spec, g)
    ver = hierarchy.verify_by_simulation(spec, g, sol, n_paths, seed, mc_steps=mc_steps)
    lead_ok, fol_ok = ver.within(3.0, 2e-2)
    cert = hierarchy.argmin_certificates(spec, sol)
    return CriterionResult(9, "Stackelberg verification by simulation", lead_ok and fol_ok and cert.passed,
                           {**ver.summary(), "certificates": vars(cert)})


# 10 --------------------------------------------------------------------------------------

REFINEMENT = ((161, 120), (227, 240), (321, 480))  # dx^2 and dt both halve per level on [-8, 8]


def _heat_exact(grids: Grids) -> np.ndarray:
    tau = grids.time.horizon - grids.time.times[:, None]
    x = grids.space.nodes[None, :]
    return (1 + tau) ** -0.5 * np.exp(-x * x / (2 * (1 + tau)))


def criterion_10() -> CriterionResult:
    spec = gaussian_heat()
    res, err = [], []
    for m, n in REFINEMENT:
        grids = Grids(TimeGrid(n, spec.horizon), SpaceGrid(-8.0, 8.0, m))
        vf, pf, _ = hjbgrid.solve_follower_hjb(spec, grids, 0)
        res.append(hjbgrid.pde_residual(vf, spec, grids, pf).max_residual)
        err.append(float(np.max(np.abs(vf.values - _heat_exact(grids)))))
    rr = [a / b for a, b in zip(res, res[1:])]
    er = [a / b for a, b in zip(err, err[1:])]
    ok = min(rr) >= 1.8 and min(er) >= 1.8
    return CriterionResult(10, "scheme order under joint (dt, dx^2) halving", ok,
                           {"residuals": res, "errors": err, "residual_ratios": rr, "error_ratios": er})


# 11 --------------------------------------------------------------------------------------


def _tree(d: Path) -> dict:
    return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


def criterion_11() -> CriterionResult:
    from .cli import main

    jobs = [
        ["risk", "--spec", "preset:abs_z", "--paths", "6000", "--steps", "20", "--seed", "7"],
        ["simulate", "--spec", "preset:lq", "--paths", "9000", "--steps", "10", "--seed", "3", "--dump-paths", "50"],
        ["stackelberg", "--spec", "preset:lq", "--points", "41", "--verify", "--mc-paths", "5000",
         "--mc-steps", "20", "--split", "0.5"],
    ]
    mismatched = []
    with tempfile.TemporaryDirectory() as tmp:
        for i, job in enumerate(jobs):
            outs = []
            for threads in ("1", "2"):
                out = Path(tmp) / f"job{i}_t{threads}"
                code = main(job + ["--out", str(out), "--threads", threads])
                if code != 0:
                    mismatched.append((job[0], f"exit {code}"))
                outs.append(_tree(out))
            if outs[0] != outs[1] or not outs[0]:
                mismatched.append((job[0], "artifacts differ"))
    return CriterionResult(11, "bitwise-deterministic CLI artifacts", not mismatched,
                           {"jobs": [j[0] for j in jobs], "problems": mismatched})


CRITERIA = {i: globals()[f"criterion_{i}"] for i in range(1, 12)}


def run_criterion(number: int) -> CriterionResult:
    start = time.perf_counter()
    res = CRITERIA[number]()
    res.seconds = time.perf_counter() - start
    return res


def run_suite(numbers=None) -> list[CriterionResult]:
    return [run_criterion(i) for i in (numbers or sorted(CRITERIA))]


__all__ = ["CriterionResult", "CRITERIA", "run_criterion", "run_suite"]
