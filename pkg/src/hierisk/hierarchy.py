"""Leader-follower (Stackelberg) solves on the grid, with the checks that go with them.

The default ``coupled`` mode makes a single backward sweep.  At each node it
tabulates the follower's best reply ``v*(u)`` for every leader control. The
leader then picks ``u*`` against that reply, and both value fields are
advanced with the pair ``(u*, v*(u*))``.  The ``fixed_point`` mode instead
alternates whole-horizon follower and leader solves until the leader policy
stops changing; it exists to cross-check the coupled sweep.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import hjbgrid
from .bsde import solve_bsde
from .errors import PreconditionError, SpecError
from .fields import BestResponseTable, PolicyField, ValueField
from .hjbgrid import _Coefficients, _close_boundary, _extend_policy, _hamiltonians
from .problem import Grids, ProblemSpec, TimeGrid, require_admissible
from .rbsde import reflection_diagnostics, solve_reflected
from .sde import PathEnsemble, accumulate_cost, simulate_paths


@dataclass
class StackelbergSolution:
    leader_value: ValueField
    follower_value: ValueField
    leader_policy: PolicyField
    follower_policy: PolicyField
    response: BestResponseTable
    reflection_residual: ValueField
    mode: str = "coupled"
    converged: bool = True
    iterations: list = field(default_factory=list)

    @property
    def grids(self) -> Grids:
        return self.leader_value.grids

    @property
    def joint_policy(self) -> PolicyField:
        """Both agents' indices in one field, as used by the path simulator."""
        return PolicyField(self.grids, u_index=self.leader_policy.u_index, v_index=self.follower_policy.v_index)

    def values_at(self, x0: float) -> tuple[float, float]:
        return self.leader_value.value_at_origin(x0), self.follower_value.value_at_origin(x0)


def _coupled_sweep(spec: ProblemSpec, grids: Grids) -> StackelbergSolution:
    coefs = _Coefficients(spec, grids)
    N, M = grids.time.n_steps, grids.space.n_points
    dx, dt = grids.space.dx, grids.time.dt
    x = grids.space.nodes
    n_u = len(spec.control_grid_u)
    phi_f = np.empty((N + 1, M))
    phi_l = np.empty((N + 1, M))
    phi_f[N] = spec.follower_terminal_at(x[:, None])
    phi_l[N] = spec.leader_terminal_at(x[:, None])
    if np.any(coefs.obstacle(grids.time.t(N)) > phi_l[N] + 1e-12):
        raise PreconditionError("obstacle lies above the leader terminal cost at T")
    resid = np.zeros((N + 1, M))
    u_idx = np.zeros((N, M), dtype=np.int64)
    v_idx = np.zeros((N, M), dtype=np.int64)
    table = np.zeros((N, M, n_u), dtype=np.int64)
    inner = np.arange(M - 2)
    for k in range(N - 1, -1, -1):
        t = grids.time.t(k)
        Hf = _hamiltonians(spec, coefs, t, phi_f[k + 1], dx, "follower")
        best_v = np.argmin(Hf, axis=1)  # (n_u, M-2)
        Hl = _hamiltonians(spec, coefs, t, phi_l[k + 1], dx, "leader")
        Hl_sel = np.take_along_axis(Hl, best_v[:, None, :], axis=1)[:, 0, :]
        u_star = np.argmin(Hl_sel, axis=0)
        v_star = best_v[u_star, inner]

        f_new = np.empty(M)
        f_new[1:-1] = phi_f[k + 1, 1:-1] + dt * Hf[u_star, v_star, inner]
        _close_boundary(f_new)
        l_tilde = np.empty(M)
        l_tilde[1:-1] = phi_l[k + 1, 1:-1] + dt * Hl_sel[u_star, inner]
        _close_boundary(l_tilde)
        l_new = np.maximum(l_tilde, coefs.obstacle(t))
        hjbgrid._check_finite(f_new, k, "follower")
        hjbgrid._check_finite(l_new, k, "leader")
        phi_f[k], phi_l[k] = f_new, l_new
        resid[k] = l_new - l_tilde
        u_idx[k] = _extend_policy(u_star)
        v_idx[k] = _extend_policy(v_star)
        table[k] = np.concatenate([best_v[:, :1], best_v, best_v[:, -1:]], axis=1).T
    return StackelbergSolution(
        leader_value=ValueField(grids, phi_l, kind="leader"),
        follower_value=ValueField(grids, phi_f, kind="follower"),
        leader_policy=PolicyField(grids, u_index=u_idx),
        follower_policy=PolicyField(grids, v_index=v_idx),
        response=BestResponseTable(grids, table),
        reflection_residual=ValueField(grids, resid, kind="reflection_residual"),
        mode="coupled",
    )


def _fixed_point(spec, grids, max_iters, tol_policy):
    u_idx = np.zeros((grids.time.n_steps, grids.space.n_points), dtype=np.int64)
    log = []
    best = None
    for it in range(1, max_iters + 1):
        fv, fp, table = hjbgrid.solve_follower_hjb(spec, grids, u_idx, override=True)
        lv, lp, res = hjbgrid.solve_leader_obstacle(spec, grids, table, fv, override=True)
        changed = float(np.mean(lp.u_index != u_idx))
        log.append({"iteration": it, "changed_fraction": changed, "leader_value_0": lv.value_at_origin(spec.x0[0])})
        best = (fv, fp, table, lv, lp, res)
        u_idx = lp.u_index
        if changed <= tol_policy:
            break
    fv, fp, table, lv, lp, res = best
    converged = log[-1]["changed_fraction"] <= tol_policy
    if not converged:
        warnings.warn(f"fixed-point iteration did not converge in {max_iters} passes", RuntimeWarning, stacklevel=3)
    # The follower field of the last pass was computed against the previous
    # leader policy; that policy is the one reported for the follower.
    return StackelbergSolution(
        leader_value=lv,
        follower_value=fv,
        leader_policy=PolicyField(grids, u_index=fp.u_index),
        follower_policy=PolicyField(grids, v_index=fp.v_index),
        response=table,
        reflection_residual=res,
        mode="fixed_point",
        converged=converged,
        iterations=log,
    )


def stackelberg_solve(
    spec: ProblemSpec,
    grids: Grids,
    mode: str = "coupled",
    max_iters: int = 50,
    tol_policy: float = 0.0,
    *,
    override: bool = False,
) -> StackelbergSolution:
    """Compute both agents' value fields and feedback policies.

    In ``fixed_point`` mode iteration stops when the fraction of nodes whose
    leader control changed is at most ``tol_policy``.  Non-convergence is
    flagged on the result (``converged=False``) with a warning, and the last
    iterate is returned.
    """
    require_admissible(spec, override)
    hjbgrid.check_cfl(spec, grids)
    if mode == "coupled":
        return _coupled_sweep(spec, grids)
    if mode == "fixed_point":
        if max_iters < 1:
            raise SpecError("max_iters must be >= 1")
        return _fixed_point(spec, grids, max_iters, tol_policy)
    raise SpecError(f"unknown mode {mode!r}")


# -- certificates ----------------------------------------------------------------------


@dataclass
class CertificateReport:
    follower_failures: int
    leader_failures: int
    response_failures: int
    nodes_checked: int

    @property
    def passed(self) -> bool:
        return self.follower_failures == self.leader_failures == self.response_failures == 0


def argmin_certificates(spec: ProblemSpec, sol: StackelbergSolution) -> CertificateReport:
    """Re-enumerate every control at every interior node and check the recorded choices.

    Three exact checks are made.  The follower's v* attains the minimum of the
    follower Hamiltonian and is the lowest such index.  The table entry for
    every u is that minimiser.  The leader's u* minimises the leader
    Hamiltonian with v = F(u) substituted.  Fields from the coupled sweep are
    evaluated on slice k+1, which is what the sweep itself used.
    """
    grids = sol.grids
    coefs = _Coefficients(spec, grids)
    N, M = grids.time.n_steps, grids.space.n_points
    dx = grids.space.dx
    n_u, n_v = len(spec.control_grid_u), len(spec.control_grid_v)
    fail_f = fail_l = fail_r = 0
    for k in range(N):
        t = grids.time.t(k)
        Hf = _hamiltonians(spec, coefs, t, sol.follower_value.values[k + 1], dx, "follower")
        Hl = _hamiltonians(spec, coefs, t, sol.leader_value.values[k + 1], dx, "leader")
        resp = sol.response.table[k, 1:-1, :].T  # (n_u, M-2)
        u_star = sol.leader_policy.u_index[k, 1:-1]
        v_star = sol.follower_policy.v_index[k, 1:-1]
        for j in range(M - 2):
            for iu in range(n_u):
                col = Hf[iu, :, j]
                best = min(range(n_v), key=lambda iv: (col[iv], iv))
                if resp[iu, j] != best:
                    fail_r += 1
            u = u_star[j]
            if v_star[j] != resp[u, j]:
                fail_f += 1
            if any(Hf[u, iv, j] < Hf[u, v_star[j], j] for iv in range(n_v)):
                fail_f += 1
            own = Hl[u, resp[u, j], j]
            if any(Hl[iu, resp[iu, j], j] < own for iu in range(n_u)):
                fail_l += 1
    return CertificateReport(fail_f, fail_l, fail_r, N * (M - 2))


# -- dynamic programming ------------------------------------------------------------------


@dataclass
class DppReport:
    split_index: int
    max_difference: float
    recomposed: ValueField


def dpp_check(spec: ProblemSpec, grids: Grids, sol: StackelbergSolution, split_r: float) -> DppReport:
    """Solve the follower on [r, T], then on [0, r] from the time-r slice, and compare."""
    k_r = grids.time.index_of(split_r)
    if k_r == 0:
        raise SpecError("split time must lie in (0, T]")
    policy = sol.leader_policy.u_index
    N = grids.time.n_steps
    if k_r == N:
        values = sol.follower_value.values.copy()
        recomposed = ValueField(grids, values, kind="follower_recomposed")
        return DppReport(k_r, 0.0, recomposed)
    late, _, _ = hjbgrid.solve_follower_hjb(spec, grids, policy, k_range=(k_r, N), override=True)
    early, _, _ = hjbgrid.solve_follower_hjb(
        spec, grids, policy, k_range=(0, k_r), terminal=late.values[k_r], override=True
    )
    values = np.vstack([early.values[:k_r], late.values[k_r:]])
    diff = float(np.max(np.abs(values - sol.follower_value.values)))
    return DppReport(k_r, diff, ValueField(grids, values, kind="follower_recomposed"))


# -- acceptability ------------------------------------------------------------------------


@dataclass
class AcceptabilityReport:
    accepted: bool
    terminal_violation: float
    violating_paths: np.ndarray
    complementarity: float
    obstacle_violation: float
    leader_y0: float | None
    notes: list = field(default_factory=list)

    def summary(self) -> dict:
        return {
            "accepted": self.accepted,
            "terminal_violation": self.terminal_violation,
            "n_violating_paths": int(self.violating_paths.size),
            "complementarity": self.complementarity,
            "obstacle_violation": self.obstacle_violation,
            "leader_y0": self.leader_y0,
            "notes": list(self.notes),
        }


def _check_ensemble(sol: StackelbergSolution, ens: PathEnsemble):
    pol = ens.policy
    ok = (
        isinstance(pol, PolicyField)
        and pol.u_index is not None
        and pol.v_index is not None
        and np.array_equal(pol.u_index, sol.leader_policy.u_index)
        and np.array_equal(pol.v_index, sol.follower_policy.v_index)
    )
    if not ok:
        raise SpecError("ensemble was not simulated under the solution's policies")


def controllability_check(
    spec: ProblemSpec, grids: Grids, sol: StackelbergSolution, ens: PathEnsemble, tol: float = 1e-9
) -> AcceptabilityReport:
    """Check along simulated paths that the leader's target is acceptable.

    The terminal cost must dominate the obstacle at T on every path.  If it
    does, a reflected solve of the leader's risk-cost under the fixed
    policies must have no obstacle violation and zero complementarity (up to
    ``1e-6 max|Y|``).  x0 is accepted when all of these hold.
    """
    _check_ensemble(sol, ens)
    xT = ens.X[:, -1, :]
    gap = spec.obstacle_at(spec.horizon, xT) - spec.leader_terminal_at(xT)
    bad = np.flatnonzero(gap > tol)
    t_viol = float(max(0.0, gap.max()))
    if bad.size:
        return AcceptabilityReport(False, t_viol, bad, float("nan"), float("nan"), None,
                                   ["terminal cost below the obstacle; the constraint set is empty"])
    costs = accumulate_cost(spec, ens)
    rs = solve_reflected(spec, ens, costs.leader_terminal, running=costs.leader_rate, override=True)
    diag = reflection_diagnostics(rs, spec, ens)
    scale = max(diag.scale, 1.0)
    accepted = diag.max_obstacle_violation <= tol * scale and diag.max_complementarity <= 1e-6 * scale
    return AcceptabilityReport(accepted, t_viol, bad, diag.max_complementarity, diag.max_obstacle_violation, rs.y0)


# -- verification by simulation ---------------------------------------------------------------


@dataclass
class VerificationReport:
    leader_grid: float
    leader_mc: float
    leader_se: float
    follower_grid: float
    follower_mc: float
    follower_se: float

    @property
    def leader_gap(self) -> float:
        return abs(self.leader_mc - self.leader_grid)

    @property
    def follower_gap(self) -> float:
        return abs(self.follower_mc - self.follower_grid)

    def within(self, n_se: float = 3.0, allowance: float = 2e-2) -> tuple[bool, bool]:
        return (
            self.leader_gap <= n_se * self.leader_se + allowance,
            self.follower_gap <= n_se * self.follower_se + allowance,
        )

    def summary(self) -> dict:
        return {
            "leader_grid": self.leader_grid,
            "leader_mc": self.leader_mc,
            "leader_se": self.leader_se,
            "leader_gap": self.leader_gap,
            "follower_grid": self.follower_grid,
            "follower_mc": self.follower_mc,
            "follower_se": self.follower_se,
            "follower_gap": self.follower_gap,
        }


def verify_by_simulation(
    spec: ProblemSpec,
    grids: Grids,
    sol: StackelbergSolution,
    n_paths: int = 20_000,
    seed: int = 0,
    *,
    mc_steps: int | None = None,
    workers: int = 1,
) -> VerificationReport:
    """Simulate under the computed policies and re-evaluate both risk-costs by regression.

    The follower's cost goes through the plain BSDE solver, the leader's
    through the reflected one.  ``mc_steps`` sets a coarser simulation grid
    (policies are looked up by time), which keeps long CFL-limited grids cheap.
    """
    if spec.state_dim != 1:
        raise SpecError("verification by simulation needs a one-dimensional grid solution")
    tg = TimeGrid(mc_steps or grids.time.n_steps, spec.horizon)
    ens = simulate_paths(spec, tg, sol.joint_policy, n_paths, seed, workers=workers, override=True)
    costs = accumulate_cost(spec, ens)
    fol = solve_bsde(spec, ens, costs.follower_terminal, running=costs.follower_rate, override=True)
    lead = solve_reflected(spec, ens, costs.leader_terminal, running=costs.leader_rate, override=True)
    lg, fg = sol.values_at(spec.x0[0])
    return VerificationReport(lg, lead.y0, lead.std_error, fg, fol.y0, fol.std_error)
