"""Command-line entry point: ``hierisk <subcommand> --spec FILE [options]``.

Every run writes into its own output directory: a ``summary.json``, the CSV
artifacts of the job and a ``manifest.json`` from which the run can be
repeated.  Failures write ``error.json`` and exit with status 1.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import acceptance, artifacts, hierarchy, hjbgrid
from .bsde import export_solution_csv, solve_bsde
from .errors import HieriskError
from .presets import PRESETS
from .problem import SpaceGrid, TimeGrid, default_space_grid, load_spec, validate_spec
from .rbsde import (
    export_reflected_csv,
    optimal_stopping_oracle,
    reflection_diagnostics,
    solve_penalized,
    solve_reflected,
)
from .sde import accumulate_cost, dump_ensemble, simulate_paths

EXIT_OK, EXIT_ERROR, EXIT_REJECTED = 0, 1, 3


def _load(spec_arg: str):
    if spec_arg.startswith("preset:"):
        name = spec_arg.split(":", 1)[1]
        if name not in PRESETS:
            raise HieriskError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        return PRESETS[name]()
    return load_spec(spec_arg)


def _positive(kind):
    def conv(text):
        val = kind(text)
        if val <= 0:
            raise argparse.ArgumentTypeError(f"expected a positive value, got {text}")
        return val
    return conv


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hierisk", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_default):
        sp.add_argument("--spec", required=True, help="JSON problem file or preset:<name>")
        sp.add_argument("--out", default=out_default, help="output directory")
        sp.add_argument("--threads", type=_positive(int), default=None,
                        help="worker threads (default: all cores; HIERISK_THREADS overrides)")
        sp.add_argument("--override", action="store_true", help="run even if validation fails")

    def mc(sp):
        sp.add_argument("--paths", type=_positive(int), default=10_000)
        sp.add_argument("--steps", type=_positive(int), default=50)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--u-index", type=int, default=0)
        sp.add_argument("--v-index", type=int, default=0)

    def grid(sp):
        sp.add_argument("--points", type=_positive(int), default=201, help="space nodes (odd)")
        sp.add_argument("--x-min", type=float, default=None)
        sp.add_argument("--x-max", type=float, default=None)
        sp.add_argument("--grid-steps", type=_positive(int), default=None, help="time steps (default: CFL limit)")

    sp = sub.add_parser("validate", help="check the problem's structural assumptions")
    common(sp, "hierisk-out/validate")
    sp.add_argument("--samples", type=_positive(int), default=512)
    sp.add_argument("--seed", type=int, default=0)

    sp = sub.add_parser("simulate", help="simulate state paths under constant controls")
    common(sp, "hierisk-out/simulate")
    mc(sp)
    sp.add_argument("--dump-paths", type=int, default=100, help="paths written to paths.csv")

    sp = sub.add_parser("risk", help="g-expectation of an agent's cost")
    common(sp, "hierisk-out/risk")
    mc(sp)
    sp.add_argument("--agent", choices=("leader", "follower"), default="follower")
    sp.add_argument("--basis", choices=("poly", "spline"), default="poly")
    sp.add_argument("--degree", type=int, default=2)

    sp = sub.add_parser("rbsde", help="leader's reflected risk-cost")
    common(sp, "hierisk-out/rbsde")
    mc(sp)
    sp.add_argument("--method", choices=("reflect", "penalize", "oracle"), default="reflect")
    sp.add_argument("--penalty", type=float, default=256.0)
    sp.add_argument("--tree-steps", type=_positive(int), default=512)

    sp = sub.add_parser("hjb-follower", help="follower HJB on a grid under a fixed leader control")
    common(sp, "hierisk-out/hjb-follower")
    grid(sp)
    sp.add_argument("--u-index", type=int, default=0)

    sp = sub.add_parser("hjb-leader", help="leader obstacle problem against the follower's best responses")
    common(sp, "hierisk-out/hjb-leader")
    grid(sp)
    sp.add_argument("--u-index", type=int, default=0, help="leader control held fixed in the follower pass")
    sp.add_argument("--penalty", type=float, default=None, help="use the penalized sweep with this n")

    sp = sub.add_parser("stackelberg", help="coupled leader-follower solve")
    common(sp, "hierisk-out/stackelberg")
    grid(sp)
    sp.add_argument("--mode", choices=("coupled", "fixed_point"), default="coupled")
    sp.add_argument("--max-iters", type=_positive(int), default=50)
    sp.add_argument("--tol-policy", type=float, default=0.0)
    sp.add_argument("--split", type=float, default=None, help="time for the dynamic-programming check")
    sp.add_argument("--verify", action="store_true", help="cross-check values by simulation")
    sp.add_argument("--mc-paths", type=_positive(int), default=20_000)
    sp.add_argument("--mc-steps", type=_positive(int), default=100)
    sp.add_argument("--seed", type=int, default=0)

    sp = sub.add_parser("suite", help="run the acceptance criteria")
    sp.add_argument("--criteria", default="all", help="comma-separated numbers or 'all'")
    sp.add_argument("--out", default="hierisk-out/suite")
    sp.add_argument("--threads", type=_positive(int), default=None)
    return p


def _threads(args) -> int:
    env = os.environ.get("HIERISK_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise HieriskError(f"HIERISK_THREADS must be an integer, got {env!r}") from None
        if n < 1:
            raise HieriskError("HIERISK_THREADS must be positive")
        return n
    return args.threads or os.cpu_count() or 1


def _config(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("out", "threads")}


def _space(spec, args) -> SpaceGrid:
    if args.x_min is None and args.x_max is None:
        return default_space_grid(spec, args.points)
    auto = default_space_grid(spec, args.points)
    lo = auto.x_min if args.x_min is None else args.x_min
    hi = auto.x_max if args.x_max is None else args.x_max
    return SpaceGrid(lo, hi, args.points)


def _grids(spec, args):
    return hjbgrid.make_grids(spec, _space(spec, args), args.grid_steps)


# -- subcommands ---------------------------------------------------------------------


def _cmd_validate(args, spec, out, threads):
    rep = validate_spec(spec, args.samples, args.seed)
    return rep.summary(), (EXIT_OK if rep.admissible else EXIT_REJECTED)


def _simulate(args, spec, threads):
    grid = TimeGrid(args.steps, spec.horizon)
    return simulate_paths(spec, grid, (args.u_index, args.v_index), args.paths, args.seed,
                          workers=threads, override=args.override)


def _cmd_simulate(args, spec, out, threads):
    ens = _simulate(args, spec, threads)
    dump_ensemble(ens, out / "paths.csv", max_paths=args.dump_paths)
    costs = accumulate_cost(spec, ens)
    xT = ens.X[:, -1, :]
    return {
        "n_paths": ens.n_paths,
        "n_steps": ens.n_steps,
        "terminal_state_mean": xT.mean(axis=0).tolist(),
        "terminal_state_std": xT.std(axis=0).tolist(),
        "leader_cost_mean": float(costs.leader_total.mean()),
        "follower_cost_mean": float(costs.follower_total.mean()),
    }, EXIT_OK


def _cmd_risk(args, spec, out, threads):
    ens = _simulate(args, spec, threads)
    costs = accumulate_cost(spec, ens)
    if args.agent == "leader":
        xi, run = costs.leader_terminal, costs.leader_rate
    else:
        xi, run = costs.follower_terminal, costs.follower_rate
    sol = solve_bsde(spec, ens, xi, running=run, basis=args.basis, degree=args.degree, override=args.override)
    export_solution_csv(sol, ens, out / "solution.csv")
    return {"agent": args.agent, "y0": sol.y0, "std_error": sol.std_error, "basis": sol.basis}, EXIT_OK


def _cmd_rbsde(args, spec, out, threads):
    if args.method == "oracle":
        val = optimal_stopping_oracle(spec, args.tree_steps, (args.u_index, args.v_index), override=args.override)
        return {"method": "oracle", "tree_steps": args.tree_steps, "value": val}, EXIT_OK
    ens = _simulate(args, spec, threads)
    costs = accumulate_cost(spec, ens)
    if args.method == "reflect":
        sol = solve_reflected(spec, ens, costs.leader_terminal, running=costs.leader_rate, override=args.override)
        export_reflected_csv(sol, ens, out / "reflected.csv")
        diag = reflection_diagnostics(sol, spec, ens)
        return {"method": "reflect", "value": sol.y0, "std_error": sol.std_error,
                "diagnostics": diag.summary()}, EXIT_OK
    sol = solve_penalized(spec, ens, costs.leader_terminal, n_penalty=args.penalty,
                          running=costs.leader_rate, override=args.override)
    export_solution_csv(sol, ens, out / "penalized.csv")
    return {"method": "penalize", "n_penalty": args.penalty, "value": sol.y0, "std_error": sol.std_error}, EXIT_OK


def _cmd_hjb_follower(args, spec, out, threads):
    grids = _grids(spec, args)
    vf, pf, _ = hjbgrid.solve_follower_hjb(spec, grids, args.u_index, override=args.override)
    artifacts.export_field(vf, out / "follower_value.csv")
    artifacts.export_field(pf, out / "follower_policy.csv")
    return {"grid": artifacts.grid_description(grids), "follower_value_0": vf.value_at_origin(spec.x0[0])}, EXIT_OK


def _cmd_hjb_leader(args, spec, out, threads):
    grids = _grids(spec, args)
    vf, _, table = hjbgrid.solve_follower_hjb(spec, grids, args.u_index, override=args.override)
    summary = {"grid": artifacts.grid_description(grids)}
    if args.penalty is not None:
        pen = hjbgrid.penalized_obstacle_sweep(spec, grids, table, args.penalty, override=args.override)
        artifacts.export_field(pen, out / "leader_penalized.csv")
        summary.update(n_penalty=args.penalty, leader_value_0=pen.value_at_origin(spec.x0[0]))
        return summary, EXIT_OK
    lf, lp, res = hjbgrid.solve_leader_obstacle(spec, grids, table, vf, override=args.override)
    artifacts.export_field(lf, out / "leader_value.csv")
    artifacts.export_field(lp, out / "leader_policy.csv")
    artifacts.export_field(res, out / "reflection_residual.csv")
    summary.update(leader_value_0=lf.value_at_origin(spec.x0[0]),
                   complementarity=hjbgrid.obstacle_complementarity(lf, res, spec))
    return summary, EXIT_OK


def _cmd_stackelberg(args, spec, out, threads):
    grids = _grids(spec, args)
    sol = hierarchy.stackelberg_solve(spec, grids, args.mode, args.max_iters, args.tol_policy,
                                      override=args.override)
    lv, fv = sol.values_at(spec.x0[0])
    artifacts.export_field(sol.leader_value, out / "leader_value.csv")
    artifacts.export_field(sol.follower_value, out / "follower_value.csv")
    artifacts.export_field(sol.joint_policy, out / "policy.csv")
    artifacts.export_field(sol.reflection_residual, out / "reflection_residual.csv")
    summary = {
        "mode": sol.mode,
        "converged": sol.converged,
        "iterations": sol.iterations,
        "grid": artifacts.grid_description(grids),
        "leader_value_0": lv,
        "follower_value_0": fv,
        "gaps": None,
        "acceptability": None,
        "dpp": None,
    }
    if args.split is not None:
        summary["dpp"] = {"split": args.split,
                          "max_difference": hierarchy.dpp_check(spec, grids, sol, args.split).max_difference}
    if args.verify:
        ver = hierarchy.verify_by_simulation(spec, grids, sol, args.mc_paths, args.seed,
                                             mc_steps=args.mc_steps, workers=threads)
        summary["gaps"] = ver.summary()
        ens = simulate_paths(spec, TimeGrid(args.mc_steps, spec.horizon), sol.joint_policy,
                             args.mc_paths, args.seed, workers=threads, override=True)
        summary["acceptability"] = hierarchy.controllability_check(spec, grids, sol, ens).summary()
    return summary, EXIT_OK


def _cmd_suite(args, out, threads):
    if args.criteria == "all":
        numbers = sorted(acceptance.CRITERIA)
    else:
        numbers = [int(c) for c in args.criteria.split(",") if c.strip()]
        unknown = [n for n in numbers if n not in acceptance.CRITERIA]
        if unknown:
            raise HieriskError(f"unknown criteria {unknown}")
    results = []
    for n in numbers:
        r = acceptance.run_criterion(n)
        print(r.line(), flush=True)
        results.append({"number": r.number, "title": r.title, "passed": r.passed, "details": r.details})
    ok = all(r["passed"] for r in results)
    return {"passed": ok, "criteria": results}, (EXIT_OK if ok else EXIT_ERROR)


COMMANDS = {
    "validate": _cmd_validate,
    "simulate": _cmd_simulate,
    "risk": _cmd_risk,
    "rbsde": _cmd_rbsde,
    "hjb-follower": _cmd_hjb_follower,
    "hjb-leader": _cmd_hjb_leader,
    "stackelberg": _cmd_stackelberg,
}


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        threads = _threads(args)
        # BLAS stays single-threaded so that reductions, and hence every
        # artifact, do not depend on the thread count; ``threads`` only
        # drives the block-parallel path simulation.
        with threadpool_limits(limits=1), np.errstate(all="ignore"):
            if args.command == "suite":
                summary, code = _cmd_suite(args, out, threads)
                spec = None
            else:
                spec = _load(args.spec)
                summary, code = COMMANDS[args.command](args, spec, out, threads)
        artifacts.write_json(summary, out / "summary.json")
        artifacts.write_json(artifacts.manifest(args.command, spec, _config(args)), out / "manifest.json")
        if args.command != "suite":
            print(json.dumps(summary, sort_keys=True, default=artifacts._json_default))
        return code
    except (HieriskError, ValueError, OSError) as exc:
        report = {"error": type(exc).__name__, "message": str(exc), "command": args.command}
        try:
            artifacts.write_json(report, out / "error.json")
        except OSError:
            pass
        print(f"hierisk {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
