"""Reflected BSDEs with a lower obstacle: projection, penalisation and a tree oracle."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from . import exprlang
from .bsde import (
    BsdeSolution,
    Driver,
    _check_shapes,
    _std_error,
    as_driver,
    backward_sweep,
    pathwise_value,
    sampled_lipschitz_y,
)
from .errors import LatticeError, PreconditionError, SpecError, StabilityError
from .problem import ProblemSpec, one_d, require_admissible
from .regression import Basis, make_basis
from .sde import PathEnsemble

TERMINAL_SLACK = 1e-12


@dataclass
class ReflectedSolution:
    Y: np.ndarray  # P x (N+1)
    Z: np.ndarray  # P x N x d
    A: np.ndarray  # P x (N+1), A[:, 0] = 0, nondecreasing
    obstacle: np.ndarray  # P x (N+1), h(t_k, X_k)
    rates: np.ndarray = field(repr=False)  # P x N driver + running values used per step
    terminal: np.ndarray = field(repr=False)
    std_error: float = 0.0
    basis: str = ""
    residual_norms: np.ndarray = None
    pathwise: np.ndarray = field(repr=False, default=None)
    W: np.ndarray = field(repr=False, default=None)  # P x N second-order coefficient (d = 1)

    @property
    def y0(self) -> float:
        return float(self.Y[0, 0])


def default_basis(ens: PathEnsemble) -> Basis:
    """Splines in one dimension, quadratic polynomials otherwise.

    A global polynomial cannot follow the kink that reflection creates in the
    continuation value and biases the projected solution upward; local
    piecewise-linear functions do not have that problem.
    """
    return make_basis("spline", knots=20) if ens.dim == 1 else make_basis("poly", 2)


def _resolve_basis(ens, basis, degree):
    if isinstance(basis, Basis):
        return basis
    if basis is None:
        return default_basis(ens)
    return make_basis(basis, degree)


def obstacle_on_paths(spec: ProblemSpec, ens: PathEnsemble, shift: float = 0.0) -> np.ndarray:
    times = ens.time_grid.times
    H = np.empty((ens.n_paths, ens.n_steps + 1))
    for k in range(ens.n_steps + 1):
        H[:, k] = spec.obstacle_at(times[k], ens.X[:, k, :])
    return H + shift


def _prepare(spec, ens, terminal, driver, running, obstacle):
    terminal, running = _check_shapes(ens, terminal, running)
    drv = as_driver(spec, driver)
    H = obstacle_on_paths(spec, ens) if obstacle is None else np.asarray(obstacle, dtype=float)
    if H.shape != (ens.n_paths, ens.n_steps + 1):
        raise SpecError("obstacle array does not match the ensemble")
    below = terminal < H[:, -1] - TERMINAL_SLACK
    if np.any(below):
        p = int(np.flatnonzero(below)[0])
        raise PreconditionError(f"terminal payoff lies below the obstacle at T (path {p})")
    ly = sampled_lipschitz_y(drv, ens.dim, spec.horizon)
    if ens.time_grid.dt * ly >= 1.0:
        raise PreconditionError("dt * Lipschitz(g in y) >= 1; refine the time grid")
    return terminal, running, drv, H


def solve_reflected(
    spec: ProblemSpec,
    ens: PathEnsemble,
    terminal: np.ndarray,
    driver=None,
    running: np.ndarray | None = None,
    *,
    obstacle: np.ndarray | None = None,
    basis: Basis | str | None = None,
    degree: int = 2,
    override: bool = False,
) -> ReflectedSolution:
    """Backward recursion with projection on the obstacle at every step.

    The push ``A_{k+1} - A_k = max(h_k - y_k, 0)`` is recorded, where ``y_k``
    is the unconstrained one-step value, so the increments are non-negative and
    vanish off the contact set by construction.
    """
    require_admissible(spec, override)
    terminal, running, drv, H = _prepare(spec, ens, terminal, driver, running, obstacle)
    b = _resolve_basis(ens, basis, degree)
    out = backward_sweep(ens, terminal, drv, running, b, obstacle=H, second_order=ens.dim == 1)
    Y, Z, dA, rates, res = out[:5]
    W = out[5] if len(out) > 5 else None
    A = np.concatenate([np.zeros((ens.n_paths, 1)), np.cumsum(dA, axis=1)], axis=1)
    q = pathwise_value(terminal, rates, dA, ens.time_grid.dt)
    return ReflectedSolution(Y=Y, Z=Z, A=A, obstacle=H, rates=rates, terminal=terminal,
                             std_error=_std_error(q), basis=b.describe(), residual_norms=res, pathwise=q, W=W)


def solve_penalized(
    spec: ProblemSpec,
    ens: PathEnsemble,
    terminal: np.ndarray,
    driver=None,
    n_penalty: float = 1.0,
    running: np.ndarray | None = None,
    *,
    obstacle: np.ndarray | None = None,
    basis: Basis | str | None = None,
    degree: int = 2,
    override: bool = False,
) -> BsdeSolution:
    """Plain BSDE with the extra driver term ``n (y - h)^-``.

    The penalty is treated explicitly, so ``dt * n_penalty <= 1`` is required;
    at equality the update coincides with projection when g = 0.
    """
    require_admissible(spec, override)
    if n_penalty < 0:
        raise SpecError("n_penalty must be non-negative")
    dt = ens.time_grid.dt
    if dt * n_penalty > 1.0 + 1e-12:
        raise StabilityError(f"dt * n_penalty = {dt * n_penalty:.4g} > 1; use at least "
                             f"{int(np.ceil(n_penalty * spec.horizon))} time steps")
    terminal, running, drv, H = _prepare(spec, ens, terminal, driver, running, obstacle)
    b = _resolve_basis(ens, basis, degree)
    Y, Z, dA, rates, res = backward_sweep(ens, terminal, drv, running, b, obstacle=H, penalty=float(n_penalty))
    q = pathwise_value(terminal, rates, dA, dt)
    return BsdeSolution(Y=Y, Z=Z, std_error=_std_error(q), basis=b.describe(), residual_norms=res, pathwise=q)


# -- tree oracle -------------------------------------------------------------------


def _lamperti_nodes(spec: ProblemSpec, sigma, n: int, step: float) -> np.ndarray:
    """States x(y_i) on the lattice y_i = i * step, i = -n..n, solving dx/dy = sigma(x)."""
    x0 = spec.x0[0]
    ys = np.arange(1, n + 1) * step
    kw = dict(rtol=1e-11, atol=1e-13, method="DOP853")
    f = lambda _y, x: sigma(x)  # noqa: E731
    up = solve_ivp(f, (0.0, ys[-1]), [x0], t_eval=ys, **kw)
    down = solve_ivp(f, (0.0, -ys[-1]), [x0], t_eval=-ys, **kw)
    if not (up.success and down.success) or up.y.shape[1] != n or down.y.shape[1] != n:
        raise LatticeError("could not map the lattice back to the state space")
    return np.concatenate([down.y[0][::-1], [x0], up.y[0]])


def optimal_stopping_oracle(
    spec: ProblemSpec,
    tree_steps: int = 512,
    controls: tuple[int, int] = (0, 0),
    *,
    override: bool = False,
) -> float:
    """Snell-envelope value of the leader's stopping problem on a binomial tree.

    The tree lives in the coordinate y with dy/dx = 1/sigma(x), where the
    diffusion has unit volatility; up and down moves of size sqrt(dt) then
    recombine and only the up-probability carries the drift
    ``m / sigma - sigma'(x) / 2``.  Controls are held at the given grid indices.
    The backward step is ``V = max(h, E[V'] + dt * (c_l + g(t, E[V'], Z)))`` with
    the tree estimate ``Z = 2 p (1 - p) (V_up - V_down) / sqrt(dt)``.
    """
    require_admissible(spec, override)
    one_d(spec)
    gen = spec.expr("generator")
    if "y" in exprlang.variables(gen):
        raise PreconditionError("tree oracle needs a driver independent of y")
    if spec.depends_on("diffusion", "t"):
        raise LatticeError("tree oracle needs a time-homogeneous diffusion coefficient")
    if tree_steps < 1:
        raise SpecError("tree_steps must be >= 1")
    u = spec.u_points[controls[0]]
    v = spec.v_points[controls[1]]
    N = int(tree_steps)
    T = spec.horizon
    dt = T / N
    sq = np.sqrt(dt)

    def sigma(x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return spec.diffusion_at(0.0, x[:, None], u, v)[:, 0, 0]

    s0 = float(sigma(spec.x0[0])[0])
    if s0 == 0.0:
        raise LatticeError("diffusion vanishes at the initial state")
    xs = _lamperti_nodes(spec, sigma, N, sq)  # index i + N  <->  y = i * sq
    sig = sigma(xs)
    if np.any(sig == 0) or np.any(np.sign(sig) != np.sign(s0)) or not np.all(np.isfinite(xs)):
        raise LatticeError("diffusion changes sign or vanishes on the lattice")
    eps = 1e-6 * np.maximum(1.0, np.abs(xs))
    dsig = (sigma(xs + eps) - sigma(xs - eps)) / (2 * eps)
    drv = as_driver(spec)

    def level(k):
        # nodes at step k: y = (2j - k) * sq, j = 0..k
        return np.arange(k + 1) * 2 - k + N

    times = np.arange(N + 1) * T / N
    times[-1] = T
    idx = level(N)
    x = xs[idx]
    V = spec.leader_terminal_at(x[:, None])
    for k in range(N - 1, -1, -1):
        idx = level(k)
        x = xs[idx]
        t = times[k]
        m = spec.drift_at(t, x[:, None], u, v)[:, 0]
        mu_y = m / sig[idx] - 0.5 * dsig[idx]
        p = 0.5 + 0.5 * mu_y * sq
        if np.any(p < -1e-12) or np.any(p > 1 + 1e-12):
            raise LatticeError(f"branch probability leaves [0, 1] at step {k}; use more tree steps")
        p = np.clip(p, 0.0, 1.0)
        vu, vd = V[1:], V[:-1]
        ev = p * vu + (1 - p) * vd
        z = (2 * p * (1 - p) * (vu - vd) / sq)[:, None]
        rate = spec.leader_cost(t, x[:, None], u) + drv(t, ev, z)
        h = spec.obstacle_at(t, x[:, None])
        V = np.maximum(h, ev + dt * rate)
    return float(V[0])


# -- diagnostics -----------------------------------------------------------------


@dataclass
class DiagnosticsReport:
    max_obstacle_violation: float
    max_complementarity: float
    complementarity_per_path: np.ndarray = field(repr=False)
    increment_discrepancy: float  # worst |A_N - A_k - max_{s>=k} (Gamma_s)^-|
    increment_discrepancy_rms: float
    scale: float  # max |Y|

    def summary(self) -> dict:
        return {
            "max_obstacle_violation": self.max_obstacle_violation,
            "max_complementarity": self.max_complementarity,
            "increment_discrepancy": self.increment_discrepancy,
            "increment_discrepancy_rms": self.increment_discrepancy_rms,
            "max_abs_y": self.scale,
        }


def reflection_diagnostics(
    sol: ReflectedSolution, spec: ProblemSpec, ens: PathEnsemble, *, second_order: bool = True
) -> DiagnosticsReport:
    """Obstacle, complementarity and running-supremum checks of a reflected solve.

    The running-supremum check compares ``A_N - A_k`` with
    ``max_{s >= k} (Gamma_s)^-`` where
    ``Gamma_s = xi + sum_{j >= s} (dt * rate_j - Z_j . dB_j) - h_s``.
    In continuous time the two agree exactly; here the difference measures how
    much of the one-step martingale increment the term ``Z dB`` misses.
    """
    if sol.Y.shape != (ens.n_paths, ens.n_steps + 1):
        raise SpecError("solution and ensemble do not match")
    dt = ens.time_grid.dt
    H = sol.obstacle
    violation = float(np.max(np.maximum(H - sol.Y, 0.0)))
    dA = np.diff(sol.A, axis=1)
    comp = np.sum((sol.Y[:, :-1] - H[:, :-1]) * dA, axis=1)
    zdb = np.einsum("pkd,pkd->pk", sol.Z, ens.dB)
    if second_order and sol.W is not None:
        db = ens.dB[:, :, 0]
        zdb = zdb + sol.W * 0.5 * (db * db - dt)
    incr = dt * sol.rates - zdb
    tail = np.cumsum(incr[:, ::-1], axis=1)[:, ::-1]  # sum_{j >= s}, s = 0..N-1
    tail = np.concatenate([tail, np.zeros((ens.n_paths, 1))], axis=1)
    gamma = sol.terminal[:, None] + tail - H
    neg = np.maximum(-gamma, 0.0)
    run_sup = np.maximum.accumulate(neg[:, ::-1], axis=1)[:, ::-1]
    remaining = sol.A[:, -1:] - sol.A
    disc = np.abs(remaining - run_sup)
    return DiagnosticsReport(
        max_obstacle_violation=violation,
        max_complementarity=float(np.max(np.abs(comp))),
        complementarity_per_path=comp,
        increment_discrepancy=float(disc.max()),
        increment_discrepancy_rms=float(np.sqrt(np.mean(disc * disc))),
        scale=float(np.max(np.abs(sol.Y))),
    )


@dataclass
class StabilityReport:
    scales: list
    sup_dy: list
    z_energy: list
    a_terminal: list

    @property
    def monotone(self) -> bool:
        def dec(seq):
            return all(b < a or (a == 0 and b == 0) for a, b in zip(seq, seq[1:]))

        return dec(self.sup_dy) and dec(self.z_energy) and dec(self.a_terminal)


def stability_probe(
    spec: ProblemSpec,
    ens: PathEnsemble,
    perturbation: dict,
    terminal: np.ndarray | None = None,
    *,
    halvings: int = 4,
    basis: Basis | str | None = None,
    override: bool = False,
) -> StabilityReport:
    """Re-solve with (xi + a d_xi, g + a d_driver, h + a d_obstacle) for a = 1, 1/2, ...

    Reports ``sup |dY|``, the mean of ``sum |dZ|^2 dt`` and the mean of
    ``|dA_T|^2`` per level, all on common random numbers.
    """
    d_xi = float(perturbation.get("d_xi", 0.0))
    d_g = float(perturbation.get("d_driver", 0.0))
    d_h = float(perturbation.get("d_obstacle", 0.0))
    for v in (d_xi, d_g, d_h):
        if not 0.0 <= abs(v) <= 1.0:
            raise SpecError("perturbation magnitudes must lie in [0, 1]")
    if terminal is None:
        terminal = spec.leader_terminal_at(ens.X[:, -1, :])
    terminal = np.asarray(terminal, dtype=float)
    b = _resolve_basis(ens, basis, 2)
    H = obstacle_on_paths(spec, ens)
    base_driver = as_driver(spec)
    base = solve_reflected(spec, ens, terminal, base_driver, obstacle=H, basis=b, override=override)
    dt = ens.time_grid.dt
    rep = StabilityReport([], [], [], [])
    for i in range(halvings + 1):
        a = 0.5 ** i
        if np.any(terminal + a * d_xi < H[:, -1] + a * d_h - TERMINAL_SLACK):
            raise PreconditionError("perturbed terminal falls below the perturbed obstacle at T")
        drv = base_driver.shifted(a * d_g) if isinstance(base_driver, Driver) else base_driver
        pert = solve_reflected(spec, ens, terminal + a * d_xi, drv, obstacle=H + a * d_h, basis=b, override=override)
        rep.scales.append(a)
        rep.sup_dy.append(float(np.max(np.abs(pert.Y - base.Y))))
        rep.z_energy.append(float(np.mean(np.sum((pert.Z - base.Z) ** 2, axis=(1, 2)) * dt)))
        rep.a_terminal.append(float(np.mean((pert.A[:, -1] - base.A[:, -1]) ** 2)))
    return rep


def export_reflected_csv(sol, ens: PathEnsemble, path) -> None:
    """Per-step CSV: step, t, mean Y, mean A."""
    import csv

    times = ens.time_grid.times
    A = getattr(sol, "A", None)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "t", "y_mean", "a_mean"])
        for k in range(ens.n_steps + 1):
            a = repr(float(A[:, k].mean())) if A is not None else ""
            w.writerow([k, repr(float(times[k])), repr(float(sol.Y[:, k].mean())), a])

