"""Least-squares Monte Carlo solver for BSDEs and the induced risk measure.

The backward recursion on an ensemble with N steps is

    Yhat_k = E_k[Y_{k+1}]
    Z_k    ~ E_k[(Y_{k+1} - Yhat_k) dB_k] / dt
    Y_k    = Yhat_k + dt * (g(t_k, Yhat_k, Z_k) + c_k)

where E_k is the cross-sectional projection of :mod:`hierisk.regression`
and ``c_k`` an optional per-path running cost.  Z is fitted to the one-step
increment ``Y_{k+1} - Yhat_k`` rather than to ``Y_{k+1}``: the expectation is
the same, most of the variance is gone, and constant shifts of the payoff
leave Z untouched.  See :func:`_z_estimate` for the exact estimator.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import exprlang
from .errors import PreconditionError, SpecError
from .problem import ProblemSpec, require_admissible
from .regression import Basis, make_basis
from .sde import PathEnsemble


@dataclass(frozen=True)
class Driver:
    """A generator g(t, y, z) given as an expression, optionally shifted by a constant."""

    source: str
    z_mode: str = "componentwise"
    parameters: tuple = ()
    shift: float = 0.0

    def __post_init__(self):
        e = exprlang.parse(self.source, dict(self.parameters))
        extra = exprlang.variables(e) - {"t", "y", "z"}
        if extra:
            raise SpecError(f"driver may only use t, y, z (found {sorted(extra)})")
        object.__setattr__(self, "_expr", e)

    def __call__(self, t, y, z):
        z = np.asarray(z, dtype=float)
        y = np.asarray(y, dtype=float)
        shape = np.broadcast_shapes(np.shape(t), y.shape, z.shape[:-1])
        if self.z_mode == "norm":
            zval = np.sqrt(np.sum(z * z, axis=-1))
        else:
            zval = tuple(z[..., i] for i in range(z.shape[-1]))
        out = exprlang.evaluate(self._expr, {"t": t, "y": y, "z": zval})
        return np.array(np.broadcast_to(np.asarray(out, dtype=float) + self.shift, shape))

    def shifted(self, c: float) -> "Driver":
        return Driver(self.source, self.z_mode, self.parameters, self.shift + c)


def as_driver(spec: ProblemSpec, driver=None) -> Callable:
    if driver is None:
        return Driver(spec.generator, spec.generator_z_mode, spec.parameters)
    if isinstance(driver, str):
        return Driver(driver, spec.generator_z_mode, spec.parameters)
    return driver


def sampled_lipschitz_y(driver: Callable, dim: int, horizon: float, n: int = 256, seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    t = rng.uniform(0, horizon, n)
    y = rng.uniform(-10, 10, n)
    z = rng.uniform(-10, 10, (n, dim))
    dy = rng.uniform(0.01, 1.0, n) * rng.choice([-1.0, 1.0], n)
    q = np.abs(driver(t, y + dy, z) - driver(t, y, z)) / np.abs(dy)
    return float(np.max(q))


@dataclass
class BsdeSolution:
    Y: np.ndarray  # P x (N+1)
    Z: np.ndarray  # P x N x d
    std_error: float
    basis: str
    residual_norms: np.ndarray  # N
    pathwise: np.ndarray = field(repr=False, default=None)  # per-path realised value whose mean is Y_0

    @property
    def y0(self) -> float:
        return float(self.Y[0, 0])


def _check_shapes(ens: PathEnsemble, terminal: np.ndarray, running: np.ndarray | None):
    terminal = np.asarray(terminal, dtype=float)
    if terminal.shape != (ens.n_paths,):
        raise SpecError(f"terminal payoff has shape {terminal.shape}, expected ({ens.n_paths},)")
    if running is not None:
        running = np.asarray(running, dtype=float)
        if running.shape != (ens.n_paths, ens.n_steps):
            raise SpecError(f"running cost has shape {running.shape}, expected {(ens.n_paths, ens.n_steps)}")
    return terminal, running


def _z_estimate(proj, dev: np.ndarray, dB: np.ndarray, dt: float) -> np.ndarray:
    """Regression estimate of Z from the one-step martingale increment ``dev``.

    In one dimension Z(X) is the weighted least-squares fit of ``dev`` by
    ``Z(X) dB``; the weights ``dB^2`` cancel most of the chi-square noise that
    the plain estimator ``E[dev dB] / dt`` carries.  In higher dimension the
    componentwise estimator is used.
    """
    if dB.shape[1] == 1:
        db = dB[:, 0]
        w = db * db
        safe = np.where(db == 0.0, 1.0, db)
        ratio = np.where(db == 0.0, 0.0, dev / safe)
        return proj.fit_weighted(ratio, w)[:, None]
    return proj.fit(dev[:, None] * dB) / dt


def backward_sweep(
    ens: PathEnsemble,
    terminal: np.ndarray,
    driver: Callable,
    running: np.ndarray | None,
    basis: Basis,
    obstacle: np.ndarray | None = None,
    penalty: float | None = None,
    second_order: bool = False,
):
    """Shared engine for plain, reflected (``obstacle`` only) and penalised solves.

    Returns ``(Y, Z, dA, rates, residual_norms)``.  ``dA`` is ``None`` for
    the plain solve and holds the per-step push (reflection amount or penalty
    contribution) otherwise; ``rates`` are the driver-plus-running values used
    at each step, so that ``terminal + dt * rates.sum(1) + dA.sum(1)`` is a
    per-path quantity whose sample mean equals ``Y_0``.

    With ``second_order`` (one dimension only) a seventh item ``W`` (P x N)
    is appended: the regression coefficient of the increment left over after
    ``Z dB`` on ``((dB)^2 - dt) / 2``, an estimate of ``sigma dZ/dx``.
    """
    P, N, d = ens.n_paths, ens.n_steps, ens.dim
    dt = ens.time_grid.dt
    times = ens.time_grid.times
    Y = np.empty((P, N + 1))
    Z = np.empty((P, N, d))
    Y[:, N] = terminal
    dA = None if obstacle is None else np.zeros((P, N))
    rates = np.empty((P, N))
    res = np.empty(N)
    W = np.empty((P, N)) if second_order else None
    if second_order and d != 1:
        raise SpecError("second-order increment terms are implemented for one dimension")
    for k in range(N - 1, -1, -1):
        proj = basis.projector(ens.X[:, k, :], k)
        nxt = Y[:, k + 1]
        yhat = proj.fit(nxt)
        dev = nxt - yhat
        res[k] = np.sqrt(np.mean(dev * dev))
        Z[:, k, :] = _z_estimate(proj, dev, ens.dB[:, k, :], dt)
        if second_order:
            db = ens.dB[:, k, 0]
            hq = 0.5 * (db * db - dt)
            left = dev - Z[:, k, 0] * db
            safe = np.where(hq == 0.0, 1.0, hq)
            W[:, k] = proj.fit_weighted(np.where(hq == 0.0, 0.0, left / safe), hq * hq)
        r = driver(times[k], yhat, Z[:, k, :])
        if running is not None:
            r = r + running[:, k]
        rates[:, k] = r
        y = yhat + dt * r
        if obstacle is not None:
            h = obstacle[:, k]
            if penalty is None:
                yk = np.maximum(y, h)
            else:
                yk = y + dt * penalty * np.maximum(h - yhat, 0.0)
            dA[:, k] = yk - y
            y = yk
        Y[:, k] = y
    if second_order:
        return Y, Z, dA, rates, res, W
    return Y, Z, dA, rates, res


def pathwise_value(terminal, rates, dA, dt) -> np.ndarray:
    q = terminal + dt * rates.sum(axis=1)
    if dA is not None:
        q = q + dA.sum(axis=1)
    return q


def _std_error(values: np.ndarray) -> float:
    return float(np.std(values, ddof=1) / np.sqrt(values.size)) if values.size > 1 else 0.0


def solve_bsde(
    spec: ProblemSpec,
    ens: PathEnsemble,
    terminal: np.ndarray,
    driver=None,
    running: np.ndarray | None = None,
    *,
    basis: Basis | str | None = None,
    degree: int = 2,
    override: bool = False,
) -> BsdeSolution:
    """Least-squares Monte Carlo solve of a BSDE on ``ens``.

    Parameters
    ----------
    terminal
        Per-path payoff at T, shape (P,).
    driver
        Generator; ``None`` uses the problem's ``g``, a string is parsed with
        the problem's parameters, any callable ``(t, y, z) -> array`` works.
    running
        Optional running cost rates, shape (P, N), added to the driver.
    basis
        ``"poly"`` (default, global polynomials of ``degree``), ``"spline"``
        or a :class:`~hierisk.regression.Basis`.
    """
    require_admissible(spec, override)
    terminal, running = _check_shapes(ens, terminal, running)
    drv = as_driver(spec, driver)
    dt = ens.time_grid.dt
    ly = sampled_lipschitz_y(drv, ens.dim, spec.horizon)
    if dt * ly >= 1.0:
        raise PreconditionError(f"dt * Lipschitz(g in y) = {dt * ly:.3g} >= 1; refine the time grid")
    b = basis if isinstance(basis, Basis) else make_basis(basis or "poly", degree)
    Y, Z, _, rates, res = backward_sweep(ens, terminal, drv, running, b)
    q = pathwise_value(terminal, rates, None, dt)
    return BsdeSolution(Y=Y, Z=Z, std_error=_std_error(q), basis=b.describe(), residual_norms=res, pathwise=q)


def risk_measure(spec: ProblemSpec, ens: PathEnsemble, xi: np.ndarray, driver=None, **kw) -> float:
    """Time-0 value of the g-expectation of ``xi``."""
    return solve_bsde(spec, ens, xi, driver, **kw).y0


# -- comparison ----------------------------------------------------------------


@dataclass
class ComparisonReport:
    min_difference: float
    y0_difference: float
    std_error: float
    tolerance: float

    @property
    def violated(self) -> bool:
        return self.min_difference < -self.tolerance


def check_comparison(
    spec: ProblemSpec,
    ens: PathEnsemble,
    first: tuple,
    second: tuple,
    tol: float | None = None,
    *,
    n_driver_samples: int = 512,
    seed: int = 0,
    **kw,
) -> ComparisonReport:
    """Solve both BSDEs on the same paths and report the smallest Y^1 - Y^2.

    ``first`` and ``second`` are ``(xi, driver)`` pairs; the first pair must
    dominate the second (payoffs pathwise, drivers on sampled points).
    The default tolerance is three standard errors of the pathwise difference.
    """
    xi1, g1 = first
    xi2, g2 = second
    xi1 = np.asarray(xi1, dtype=float)
    xi2 = np.asarray(xi2, dtype=float)
    if np.any(xi1 < xi2 - 1e-12):
        raise PreconditionError("payoffs are not ordered: xi1 < xi2 on some path")
    d1, d2 = as_driver(spec, g1), as_driver(spec, g2)
    rng = np.random.default_rng(seed)
    t = rng.uniform(0, spec.horizon, n_driver_samples)
    y = rng.uniform(-10, 10, n_driver_samples)
    z = rng.uniform(-10, 10, (n_driver_samples, ens.dim))
    if np.any(d1(t, y, z) < d2(t, y, z) - 1e-12):
        raise PreconditionError("drivers are not ordered: g1 < g2 at a sampled point")
    s1 = solve_bsde(spec, ens, xi1, d1, **kw)
    s2 = solve_bsde(spec, ens, xi2, d2, **kw)
    diff = s1.Y - s2.Y
    se = _std_error(s1.pathwise - s2.pathwise)
    return ComparisonReport(
        min_difference=float(diff.min()),
        y0_difference=float(diff[0, 0]),
        std_error=se,
        tolerance=3.0 * se if tol is None else tol,
    )


# -- axioms ----------------------------------------------------------------------

EXACT_TOL = 1e-10


@dataclass
class AxiomResult:
    name: str
    status: str  # "pass", "fail" or "not applicable"
    lhs: float = float("nan")
    rhs: float = float("nan")
    tolerance: float = float("nan")


@dataclass
class AxiomReport:
    results: list

    def __getitem__(self, name: str) -> AxiomResult:
        for r in self.results:
            if r.name == name:
                return r
        raise KeyError(name)

    @property
    def passed(self) -> bool:
        return all(r.status != "fail" for r in self.results)


def check_axioms(
    spec: ProblemSpec,
    ens: PathEnsemble,
    xi: np.ndarray,
    xi_other: np.ndarray | None = None,
    nu: float = 2.0,
    lam: float = 0.5,
    flags=None,
    driver=None,
    **kw,
) -> AxiomReport:
    """Numerically test convexity (p1), monotonicity (p2), translation (p3),
    positive homogeneity (p4) and normalisation (p5) at t = 0.

    Statistical axioms use three standard errors as tolerance; translation and
    normalisation are algebraically exact for the scheme and use 1e-10.
    """
    if not 0 < lam <= 1:
        raise SpecError("lambda must lie in (0, 1]")
    flags = flags or spec.generator_flags
    xi = np.asarray(xi, dtype=float)
    other = np.zeros_like(xi) if xi_other is None else np.asarray(xi_other, dtype=float)

    cache: dict = {}

    def rho(key, payoff):
        if key not in cache:
            cache[key] = solve_bsde(spec, ens, payoff, driver, **kw)
        return cache[key]

    out = []
    a, b = rho("xi", xi), rho("other", other)
    if flags.convex:
        mix = rho("mix", lam * xi + (1 - lam) * other)
        rhs = lam * a.y0 + (1 - lam) * b.y0
        tol = 3.0 * max(mix.std_error, a.std_error, b.std_error)
        out.append(AxiomResult("p1", "pass" if mix.y0 <= rhs + tol else "fail", mix.y0, rhs, tol))
    else:
        out.append(AxiomResult("p1", "not applicable"))

    hi = rho("max", np.maximum(xi, other))
    tol = 3.0 * max(hi.std_error, b.std_error)
    out.append(AxiomResult("p2", "pass" if hi.y0 >= b.y0 - tol else "fail", hi.y0, b.y0, tol))

    if flags.zero_at_zero_z:
        sh = rho("shift", xi + nu)
        ok = abs(sh.y0 - (a.y0 + nu)) <= EXACT_TOL * max(1.0, abs(nu))
        out.append(AxiomResult("p3", "pass" if ok else "fail", sh.y0, a.y0 + nu, EXACT_TOL))
    else:
        out.append(AxiomResult("p3", "not applicable"))

    if flags.positively_homogeneous:
        sc = rho("scale", lam * xi)
        tol = 3.0 * max(sc.std_error, lam * a.std_error)
        ok = abs(sc.y0 - lam * a.y0) <= tol
        out.append(AxiomResult("p4", "pass" if ok else "fail", sc.y0, lam * a.y0, tol))
    else:
        out.append(AxiomResult("p4", "not applicable"))

    if flags.zero_at_zero_z:
        z0 = rho("zero", np.zeros_like(xi))
        out.append(AxiomResult("p5", "pass" if abs(z0.y0) <= EXACT_TOL else "fail", z0.y0, 0.0, EXACT_TOL))
    else:
        out.append(AxiomResult("p5", "not applicable"))
    return AxiomReport(out)


def export_solution_csv(sol, ens: PathEnsemble, path: str | Path, extra: Sequence[str] = ()) -> None:
    """Per-step summary: step, t, Y mean, Y std, Z mean per dimension (and A mean when present)."""
    times = ens.time_grid.times
    N = ens.n_steps
    A = getattr(sol, "A", None)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        head = ["step", "t", "y_mean", "y_std"] + [f"z{i + 1}_mean" for i in range(ens.dim)]
        if A is not None:
            head.append("a_mean")
        w.writerow(head)
        for k in range(N + 1):
            row = [k, repr(float(times[k])), repr(float(sol.Y[:, k].mean())), repr(float(sol.Y[:, k].std()))]
            if k < N:
                row += [repr(float(v)) for v in sol.Z[:, k, :].mean(axis=0)]
            else:
                row += [""] * ens.dim
            if A is not None:
                row.append(repr(float(A[:, k].mean())))
            w.writerow(row)
