"""Explicit monotone finite differences for the follower HJB and the leader obstacle problem.

All solvers work on a one-dimensional space grid and step backward in time:

    phi_k = phi_{k+1} + dt * min_w H^w[phi_{k+1}]

with ``H^w[phi] = 1/2 a D2 phi + m D phi + g(t, phi, sigma Dc phi) + c`` where ``D2``
is the central second difference, ``D`` the upwind first difference (forward
for m >= 0) and ``Dc`` the central first difference.  Coefficients are taken at
``t_k``.  End nodes are closed by linear extrapolation.  The leader's update
is followed by the projection ``phi <- max(phi, h)``.

Under the step restriction ``dt <= 0.9 dx^2 / (max a + dx max|m|)`` the
stencil weights are non-negative, so each update is a convex combination of
neighbouring values plus a source term.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NonFiniteValueError, PreconditionError, SpecError, StabilityError
from .fields import BestResponseTable, PolicyField, ValueField
from .problem import Grids, ProblemSpec, SpaceGrid, TimeGrid, one_d, require_admissible

CFL_SAFETY = 0.9


# -- coefficients -------------------------------------------------------------------


class _Coefficients:
    """Drift, diffusion and costs on (n_u, n_v, M), cached when time-independent."""

    def __init__(self, spec: ProblemSpec, grids: Grids):
        one_d(spec)
        self.spec = spec
        self.x = grids.space.nodes
        self.U = spec.u_points
        self.V = spec.v_points
        self.time_dep = {
            "dyn": spec.depends_on("drift", "t") or spec.depends_on("diffusion", "t"),
            "cl": spec.depends_on("leader_running_cost", "t"),
            "cf": spec.depends_on("follower_running_cost", "t"),
            "h": spec.depends_on("obstacle", "t"),
        }
        self._cache: dict = {}

    def _get(self, key, t, fn):
        ck = key if not self.time_dep[key] else (key, t)
        if ck not in self._cache:
            if self.time_dep[key]:
                # keep only the latest slice for time-dependent data
                self._cache = {k: v for k, v in self._cache.items() if not isinstance(k, tuple) or k[0] != key}
            self._cache[ck] = fn(t)
        return self._cache[ck]

    def dynamics(self, t: float):
        def build(tt):
            xg = self.x[None, None, :, None]
            u = self.U[:, None, None, :]
            v = self.V[None, :, None, :]
            m = self.spec.drift_at(tt, xg, u, v)[..., 0]
            s = self.spec.diffusion_at(tt, xg, u, v)[..., 0, 0]
            shape = (len(self.U), len(self.V), self.x.size)
            return np.broadcast_to(m, shape), np.broadcast_to(s, shape)

        return self._get("dyn", t, build)

    def leader_cost(self, t):
        return self._get("cl", t, lambda tt: np.broadcast_to(
            self.spec.leader_cost(tt, self.x[None, :, None], self.U[:, None, :]), (len(self.U), self.x.size)))

    def follower_cost(self, t):
        return self._get("cf", t, lambda tt: np.broadcast_to(
            self.spec.follower_cost(tt, self.x[None, :, None], self.V[:, None, :]), (len(self.V), self.x.size)))

    def obstacle(self, t):
        return self._get("h", t, lambda tt: self.spec.obstacle_at(tt, self.x[:, None]))


def _derivatives(phi: np.ndarray, dx: float):
    """Interior central second, forward, backward and central first differences."""
    left, mid, right = phi[:-2], phi[1:-1], phi[2:]
    d2 = (right - 2.0 * mid + left) / (dx * dx)
    df = (right - mid) / dx
    db = (mid - left) / dx
    dc = (right - left) / (2.0 * dx)
    return d2, df, db, dc


def _generator_part(m, s, d2, df, db):
    return 0.5 * s * s * d2 + np.maximum(m, 0.0) * df + np.minimum(m, 0.0) * db


def _hamiltonians(spec, coefs: _Coefficients, t: float, phi: np.ndarray, dx: float, cost: str):
    """H^{u,v} at interior nodes for every control pair, shape (n_u, n_v, M-2)."""
    m, s = coefs.dynamics(t)
    m, s = m[:, :, 1:-1], s[:, :, 1:-1]
    d2, df, db, dc = _derivatives(phi, dx)
    L = _generator_part(m, s, d2, df, db)
    z = (s * dc)[..., None]
    G = spec.generator_at(t, np.broadcast_to(phi[1:-1], z.shape[:-1]), z)
    if cost == "follower":
        c = coefs.follower_cost(t)[None, :, 1:-1]
    else:
        c = coefs.leader_cost(t)[:, None, 1:-1]
    return L + G + c


def _close_boundary(phi: np.ndarray) -> None:
    phi[0] = 2.0 * phi[1] - phi[2]
    phi[-1] = 2.0 * phi[-2] - phi[-3]


def _extend_policy(idx: np.ndarray) -> np.ndarray:
    """Interior policy row of length M-2 padded with its end values."""
    return np.concatenate([idx[:1], idx, idx[-1:]])


def _check_finite(phi, k, what):
    if not np.all(np.isfinite(phi)):
        raise NonFiniteValueError(f"non-finite {what} value at step {k}")


# -- step restriction ---------------------------------------------------------------


def _coefficient_bounds(spec: ProblemSpec, grids: Grids) -> tuple[float, float]:
    coefs = _Coefficients(spec, grids)
    tg = grids.time
    if coefs.time_dep["dyn"]:
        ks = np.unique(np.linspace(0, tg.n_steps - 1, min(tg.n_steps, 64)).astype(int))
    else:
        ks = [0]
    amax = mmax = 0.0
    for k in ks:
        m, s = coefs.dynamics(tg.t(int(k)))
        amax = max(amax, float(np.max(s * s)))
        mmax = max(mmax, float(np.max(np.abs(m))))
    return amax, mmax


def max_stable_dt(spec: ProblemSpec, space: SpaceGrid, n_probe_steps: int = 64) -> float:
    """Largest dt allowed by the monotonicity restriction on ``space``."""
    grids = Grids(TimeGrid(n_probe_steps, spec.horizon), space)
    amax, mmax = _coefficient_bounds(spec, grids)
    dx = space.dx
    denom = amax + dx * mmax
    return math.inf if denom == 0 else CFL_SAFETY * dx * dx / denom


def cfl_steps(spec: ProblemSpec, space: SpaceGrid) -> int:
    """Smallest number of time steps satisfying the restriction."""
    dtm = max_stable_dt(spec, space)
    return 1 if math.isinf(dtm) else max(1, math.ceil(spec.horizon / dtm - 1e-9))


def make_grids(spec: ProblemSpec, space: SpaceGrid, n_steps: int | None = None, multiple_of: int = 1) -> Grids:
    """Grids on ``space`` with the CFL-limited number of steps unless ``n_steps`` is given.

    ``multiple_of`` rounds the CFL count up, e.g. to 2 so that T/2 is a node.
    """
    if n_steps is None:
        n_steps = -(-cfl_steps(spec, space) // multiple_of) * multiple_of
    return Grids(TimeGrid(n_steps, spec.horizon), space)


def check_cfl(spec: ProblemSpec, grids: Grids) -> None:
    if abs(grids.time.horizon - spec.horizon) > 1e-12 * spec.horizon:
        raise SpecError("time grid horizon differs from the problem horizon")
    amax, mmax = _coefficient_bounds(spec, grids)
    dx, dt = grids.space.dx, grids.time.dt
    if dt * (amax + dx * mmax) > CFL_SAFETY * dx * dx * (1 + 1e-12):
        need = cfl_steps(spec, grids.space)
        raise StabilityError(f"time step {dt:.4g} violates the stability restriction; use at least {need} steps")


def stencil_weights(spec: ProblemSpec, grids: Grids, k: int = 0):
    """Weights (w_minus, w_centre, w_plus) of the linear part of the update, shape (n_u, n_v, M-2)."""
    coefs = _Coefficients(spec, grids)
    m, s = coefs.dynamics(grids.time.t(k))
    m, s = m[:, :, 1:-1], s[:, :, 1:-1]
    dx, dt = grids.space.dx, grids.time.dt
    a = s * s
    wp = dt * (a / (2 * dx * dx) + np.maximum(m, 0.0) / dx)
    wm = dt * (a / (2 * dx * dx) + np.maximum(-m, 0.0) / dx)
    w0 = 1.0 - dt * (a / (dx * dx) + np.abs(m) / dx)
    return wm, w0, wp


# -- pointwise generator ---------------------------------------------------------------


def apply_generator(spec: ProblemSpec, field: ValueField, k: int, j: int, u, v) -> float:
    """``1/2 a D2 phi + m D phi`` at node ``j`` of slice ``k`` for control values ``u``, ``v``."""
    one_d(spec)
    M = field.grids.space.n_points
    if not 1 <= j <= M - 2:
        raise PreconditionError("apply_generator is defined on interior nodes only")
    x = field.grids.space.nodes[j]
    t = field.grids.time.t(k)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    v = np.atleast_1d(np.asarray(v, dtype=float))
    m = float(spec.drift_at(t, np.array([x]), u, v)[0])
    s = float(spec.diffusion_at(t, np.array([x]), u, v)[0, 0])
    phi = field.values[k, j - 1 : j + 2]
    d2, df, db, _ = _derivatives(phi, field.grids.space.dx)
    return float(_generator_part(m, s, d2, df, db)[0])


# -- follower ---------------------------------------------------------------------------


def _leader_indices(leader_policy, grids: Grids, n_u: int):
    N, M = grids.time.n_steps, grids.space.n_points
    if leader_policy is None:
        leader_policy = 0
    if isinstance(leader_policy, (int, np.integer)):
        if not 0 <= leader_policy < n_u:
            raise SpecError("leader control index outside the U grid")
        return np.full((N, M), int(leader_policy), dtype=np.int64)
    if isinstance(leader_policy, PolicyField):
        arr = leader_policy.u_index
    else:
        arr = np.asarray(leader_policy)
    if arr is None or arr.shape != (N, M):
        raise SpecError("leader policy is not defined on the solver grids")
    return np.asarray(arr, dtype=np.int64)


def solve_follower_hjb(
    spec: ProblemSpec,
    grids: Grids,
    leader_policy: PolicyField | int | None = None,
    *,
    k_range: tuple[int, int] | None = None,
    terminal: np.ndarray | None = None,
    override: bool = False,
):
    """Backward sweep for the follower's value under a given leader feedback.

    Returns ``(ValueField, PolicyField, BestResponseTable)``.  The table holds,
    for every leader control on the U grid, the follower's minimising V index
    (lowest index on ties); the policy field holds the leader's indices and the
    follower's response to them.

    ``k_range=(k0, k1)`` with a ``terminal`` slice for step ``k1`` restricts the
    sweep to steps ``k0..k1`` (entries outside stay NaN); this is how the
    dynamic-programming check recomposes the solution.
    """
    require_admissible(spec, override)
    check_cfl(spec, grids)
    coefs = _Coefficients(spec, grids)
    N, M = grids.time.n_steps, grids.space.n_points
    dx, dt = grids.space.dx, grids.time.dt
    n_u = len(spec.control_grid_u)
    uidx = _leader_indices(leader_policy, grids, n_u)
    k0, k1 = (0, N) if k_range is None else k_range
    if not 0 <= k0 < k1 <= N:
        raise SpecError("invalid step range")
    values = np.full((N + 1, M), np.nan)
    values[k1] = spec.follower_terminal_at(grids.space.nodes[:, None]) if terminal is None else terminal
    vidx = np.zeros((N, M), dtype=np.int64)
    table = np.zeros((N, M, n_u), dtype=np.int64)
    inner = np.arange(M - 2)
    for k in range(k1 - 1, k0 - 1, -1):
        t = grids.time.t(k)
        phi = values[k + 1]
        H = _hamiltonians(spec, coefs, t, phi, dx, "follower")  # (n_u, n_v, M-2)
        best_v = np.argmin(H, axis=1)  # (n_u, M-2)
        u_here = uidx[k, 1:-1]
        v_here = best_v[u_here, inner]
        new = np.empty(M)
        new[1:-1] = phi[1:-1] + dt * H[u_here, v_here, inner]
        _close_boundary(new)
        _check_finite(new, k, "follower")
        values[k] = new
        vidx[k] = _extend_policy(v_here)
        table[k] = np.concatenate([best_v[:, :1], best_v, best_v[:, -1:]], axis=1).T
    vf = ValueField(grids, values, kind="follower", meta={"leader": "fixed" if np.ndim(leader_policy) == 0 else "policy"})
    return vf, PolicyField(grids, u_index=uidx, v_index=vidx), BestResponseTable(grids, table)


# -- leader -------------------------------------------------------------------------------


def _leader_step(spec, coefs, grids, k, phi, table_k):
    """Unconstrained leader update and argmin u at step k (interior + closure)."""
    dx, dt = grids.space.dx, grids.time.dt
    M = grids.space.n_points
    t = grids.time.t(k)
    H = _hamiltonians(spec, coefs, t, phi, dx, "leader")  # (n_u, n_v, M-2)
    n_u = H.shape[0]
    resp = table_k[1:-1, :].T  # (n_u, M-2)
    Hsel = np.take_along_axis(H, resp[:, None, :], axis=1)[:, 0, :]  # (n_u, M-2)
    u_star = np.argmin(Hsel, axis=0)
    inner = np.arange(M - 2)
    new = np.empty(M)
    new[1:-1] = phi[1:-1] + dt * Hsel[u_star, inner]
    _close_boundary(new)
    return new, u_star, resp[u_star, inner], n_u


def solve_leader_obstacle(
    spec: ProblemSpec,
    grids: Grids,
    response: BestResponseTable,
    follower_value: ValueField | None = None,
    *,
    override: bool = False,
):
    """Backward sweep for the leader with projection onto the obstacle.

    Returns ``(ValueField, PolicyField, residual ValueField)`` where the
    residual holds the projection amount ``max(h - phi_tilde, 0)`` at each node,
    the grid counterpart of the increase of the reflection process.
    """
    require_admissible(spec, override)
    check_cfl(spec, grids)
    if response.table.shape[:2] != (grids.time.n_steps, grids.space.n_points):
        raise SpecError("best-response table is not defined on the solver grids")
    if follower_value is not None and follower_value.values.shape != (grids.time.n_steps + 1, grids.space.n_points):
        raise SpecError("follower field is not defined on the solver grids")
    coefs = _Coefficients(spec, grids)
    N, M = grids.time.n_steps, grids.space.n_points
    x = grids.space.nodes
    values = np.empty((N + 1, M))
    values[N] = spec.leader_terminal_at(x[:, None])
    hT = coefs.obstacle(grids.time.t(N))
    if np.any(hT > values[N] + 1e-12):
        raise PreconditionError("obstacle lies above the leader terminal cost at T")
    resid = np.zeros((N + 1, M))
    uidx = np.zeros((N, M), dtype=np.int64)
    vidx = np.zeros((N, M), dtype=np.int64)
    for k in range(N - 1, -1, -1):
        tilde, u_star, v_star, _ = _leader_step(spec, coefs, grids, k, values[k + 1], response.table[k])
        h = coefs.obstacle(grids.time.t(k))
        proj = np.maximum(tilde, h)
        _check_finite(proj, k, "leader")
        values[k] = proj
        resid[k] = proj - tilde
        uidx[k] = _extend_policy(u_star)
        vidx[k] = _extend_policy(v_star)
    lf = ValueField(grids, values, kind="leader")
    rf = ValueField(grids, resid, kind="reflection_residual")
    return lf, PolicyField(grids, u_index=uidx, v_index=vidx), rf


def penalized_obstacle_sweep(
    spec: ProblemSpec,
    grids: Grids,
    response: BestResponseTable,
    n_penalty: float,
    *,
    override: bool = False,
) -> ValueField:
    """Leader sweep with the penalty ``n (phi - h)^-`` instead of projection.

    The penalty acts on the unconstrained update ``phi_tilde``:
    ``phi = phi_tilde + dt n (h - phi_tilde)^+``.  With ``dt n <= 1`` this is
    bounded by ``max(phi_tilde, h)`` and nondecreasing in ``n``.
    """
    require_admissible(spec, override)
    check_cfl(spec, grids)
    if n_penalty < 0:
        raise SpecError("n_penalty must be non-negative")
    dt = grids.time.dt
    if dt * n_penalty > 1.0 + 1e-12:
        raise StabilityError(f"dt * n_penalty = {dt * n_penalty:.4g} exceeds 1")
    coefs = _Coefficients(spec, grids)
    N, M = grids.time.n_steps, grids.space.n_points
    values = np.empty((N + 1, M))
    values[N] = spec.leader_terminal_at(grids.space.nodes[:, None])
    for k in range(N - 1, -1, -1):
        tilde, *_ = _leader_step(spec, coefs, grids, k, values[k + 1], response.table[k])
        h = coefs.obstacle(grids.time.t(k))
        values[k] = tilde + dt * n_penalty * np.maximum(h - tilde, 0.0)
        _check_finite(values[k], k, "penalized")
    return ValueField(grids, values, kind="penalized", meta={"n_penalty": float(n_penalty)})


# -- residuals ------------------------------------------------------------------------------


@dataclass
class ResidualReport:
    max_residual: float
    max_contact_gap: float
    n_interior: int
    n_contact: int
    residual: np.ndarray  # N x (M-2), NaN on excluded nodes

    def summary(self) -> dict:
        return {
            "max_residual": self.max_residual,
            "max_contact_gap": self.max_contact_gap,
            "n_interior": self.n_interior,
            "n_contact": self.n_contact,
        }


def pde_residual(
    field: ValueField,
    spec: ProblemSpec,
    grids: Grids,
    policy: PolicyField,
    equation: str = "follower",
    response: BestResponseTable | None = None,
    *,
    contact_margin: float | None = None,
) -> ResidualReport:
    """Discrete residual ``(phi_{k+1} - phi_k)/dt + min H[phi_k]`` at interior nodes.

    The Hamiltonian is minimised on slice ``k`` itself (over V for the
    follower, given the recorded leader control; over U with v = F(u) for the
    leader), so the residual is the defect of the explicit solution in the
    implicit-in-time equation and shrinks like ``dt`` for smooth solutions.
    For the leader, nodes within ``contact_margin`` (default ``10 dx``) of the
    obstacle are excluded from the residual and their gap ``phi - h`` is
    reported instead.
    """
    if equation not in ("follower", "leader"):
        raise ValueError("equation must be 'follower' or 'leader'")
    if equation == "leader" and response is None:
        raise SpecError("the leader residual needs the best-response table")
    coefs = _Coefficients(spec, grids)
    N, M = grids.time.n_steps, grids.space.n_points
    dx, dt = grids.space.dx, grids.time.dt
    margin = 10.0 * dx if contact_margin is None else contact_margin
    phi = field.values
    out = np.full((N, M - 2), np.nan)
    inner = np.arange(M - 2)
    max_gap = 0.0
    n_contact = 0
    for k in range(N):
        t = grids.time.t(k)
        if equation == "follower":
            H = _hamiltonians(spec, coefs, t, phi[k], dx, "follower")
            u_here = policy.u_index[k, 1:-1]
            hmin = np.min(H[u_here, :, inner], axis=1)
            keep = np.ones(M - 2, dtype=bool)
        else:
            H = _hamiltonians(spec, coefs, t, phi[k], dx, "leader")
            resp = response.table[k, 1:-1, :].T
            Hsel = np.take_along_axis(H, resp[:, None, :], axis=1)[:, 0, :]
            hmin = np.min(Hsel, axis=0)
            gap = phi[k, 1:-1] - coefs.obstacle(t)[1:-1]
            keep = gap > margin
            if np.any(~keep):
                n_contact += int(np.sum(~keep))
                max_gap = max(max_gap, float(np.max(np.abs(gap[~keep]))))
        r = (phi[k + 1, 1:-1] - phi[k, 1:-1]) / dt + hmin
        out[k, keep] = r[keep]
    valid = ~np.isnan(out)
    return ResidualReport(
        max_residual=float(np.max(np.abs(out[valid]))) if np.any(valid) else float("nan"),
        max_contact_gap=max_gap,
        n_interior=int(valid.sum()),
        n_contact=n_contact,
        residual=out,
    )


def obstacle_complementarity(leader: ValueField, residual: ValueField, spec: ProblemSpec) -> float:
    """Largest ``|min(phi - h, R / dt)|`` over all nodes before T; zero for an exact projection sweep."""
    grids = leader.grids
    coefs = _Coefficients(spec, grids)
    worst = 0.0
    for k in range(grids.time.n_steps):
        h = coefs.obstacle(grids.time.t(k))
        val = np.minimum(leader.values[k] - h, residual.values[k] / grids.time.dt)
        worst = max(worst, float(np.max(np.abs(val))))
    return worst
