"""Euler-Maruyama simulation of the controlled state and pathwise cost sums."""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import NonFiniteStateError, SpecError
from .fields import PolicyField
from .problem import ProblemSpec, TimeGrid, require_admissible

# Paths are generated in blocks of this many; block b draws from its own
# Philox stream keyed by (seed, b), so a path's increments depend only on the
# seed and the path index, never on the number of workers.
BLOCK_SIZE = 4096


@dataclass
class PathEnsemble:
    seed: int
    time_grid: TimeGrid
    dB: np.ndarray  # P x N x d
    X: np.ndarray  # P x (N+1) x d
    u_index: np.ndarray  # P x N
    v_index: np.ndarray  # P x N
    policy: object = None

    @property
    def n_paths(self) -> int:
        return self.X.shape[0]

    @property
    def n_steps(self) -> int:
        return self.time_grid.n_steps

    @property
    def dim(self) -> int:
        return self.X.shape[2]

    def controls(self, spec: ProblemSpec, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Applied control values at step ``k`` (shapes P x m_u, P x m_v)."""
        return spec.u_points[self.u_index[:, k]], spec.v_points[self.v_index[:, k]]


@dataclass
class CostAccumulation:
    """Left-point running integrals (P x (N+1), zero at t=0), per-step rates and terminals."""

    leader_rate: np.ndarray
    follower_rate: np.ndarray
    leader_running: np.ndarray
    follower_running: np.ndarray
    leader_terminal: np.ndarray
    follower_terminal: np.ndarray

    @property
    def leader_total(self) -> np.ndarray:
        return self.leader_running[:, -1] + self.leader_terminal

    @property
    def follower_total(self) -> np.ndarray:
        return self.follower_running[:, -1] + self.follower_terminal


def brownian_increments(n_paths: int, n_steps: int, dim: int, dt: float, seed: int, workers: int = 1) -> np.ndarray:
    """Seeded N(0, dt) increments of shape (n_paths, n_steps, dim)."""
    out = np.empty((n_paths, n_steps, dim))
    sq = np.sqrt(dt)
    blocks = range(0, n_paths, BLOCK_SIZE)

    def fill(start):
        b = start // BLOCK_SIZE
        stop = min(start + BLOCK_SIZE, n_paths)
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, b])))
        out[start:stop] = rng.standard_normal((stop - start, n_steps, dim)) * sq

    _run_blocks(fill, blocks, workers)
    return out


def _run_blocks(fn, starts, workers):
    starts = list(starts)
    if workers <= 1 or len(starts) <= 1:
        for s in starts:
            fn(s)
        return
    with ThreadPoolExecutor(max_workers=workers) as pool:
        list(pool.map(fn, starts))


def simulate_paths(
    spec: ProblemSpec,
    grid: TimeGrid,
    policy: PolicyField | tuple[int, int] = (0, 0),
    n_paths: int = 10_000,
    seed: int = 0,
    *,
    increments: np.ndarray | None = None,
    workers: int = 1,
    override: bool = False,
) -> PathEnsemble:
    """Simulate ``X_{k+1} = X_k + m dt + sigma dB_k`` under a feedback policy.

    ``policy`` is either a :class:`PolicyField` (controls read at the nearest
    interior space node) or a pair of constant control indices ``(iu, iv)``.
    Passing ``increments`` reuses a given Brownian sample, which is how common
    random numbers are shared between runs with different policies.
    """
    require_admissible(spec, override)
    if n_paths < 1:
        raise SpecError("n_paths must be >= 1")
    if abs(grid.horizon - spec.horizon) > 1e-12 * spec.horizon:
        raise SpecError("time grid horizon differs from the problem horizon")
    N, d, dt = grid.n_steps, spec.state_dim, grid.dt
    if increments is None:
        dB = brownian_increments(n_paths, N, d, dt, seed, workers)
    else:
        dB = np.asarray(increments, dtype=float)
        if dB.shape != (n_paths, N, d):
            raise SpecError(f"increments have shape {dB.shape}, expected {(n_paths, N, d)}")

    feedback = isinstance(policy, PolicyField)
    if feedback:
        if d != 1:
            raise SpecError("feedback policies are defined on one-dimensional grids")
        policy.validate(len(spec.control_grid_u), len(spec.control_grid_v))
        u_idx = np.empty((n_paths, N), dtype=np.int64)
        v_idx = np.empty((n_paths, N), dtype=np.int64)
    else:
        iu, iv = policy
        if not (0 <= iu < len(spec.control_grid_u) and 0 <= iv < len(spec.control_grid_v)):
            raise SpecError("constant control index outside the control grid")
        u_idx = np.broadcast_to(np.int64(iu), (n_paths, N))
        v_idx = np.broadcast_to(np.int64(iv), (n_paths, N))

    X = np.empty((n_paths, N + 1, d))
    X[:, 0, :] = np.asarray(spec.x0)
    U, V = spec.u_points, spec.v_points
    times = grid.times

    def run(start):
        stop = min(start + BLOCK_SIZE, n_paths)
        sl = slice(start, stop)
        for k in range(N):
            xk = X[sl, k, :]
            if feedback:
                u_idx[sl, k], v_idx[sl, k] = policy.lookup(times[k], xk[:, 0])
            u = U[u_idx[sl, k]]
            v = V[v_idx[sl, k]]
            m = spec.drift_at(times[k], xk, u, v)
            s = spec.diffusion_at(times[k], xk, u, v)
            nxt = xk + m * dt + np.einsum("pij,pj->pi", s, dB[sl, k, :])
            bad = ~np.all(np.isfinite(nxt), axis=1)
            if np.any(bad):
                raise NonFiniteStateError(start + int(np.flatnonzero(bad)[0]), k + 1)
            X[sl, k + 1, :] = nxt

    _run_blocks(run, range(0, n_paths, BLOCK_SIZE), workers)
    return PathEnsemble(seed=seed, time_grid=grid, dB=dB, X=X, u_index=u_idx, v_index=v_idx,
                        policy=policy if feedback else tuple(policy))


def accumulate_cost(spec: ProblemSpec, ens: PathEnsemble) -> CostAccumulation:
    """Left-endpoint Riemann sums of the running costs plus terminal costs."""
    N, dt = ens.n_steps, ens.time_grid.dt
    P = ens.n_paths
    times = ens.time_grid.times
    rl = np.empty((P, N))
    rf = np.empty((P, N))
    for k in range(N):
        u, v = ens.controls(spec, k)
        xk = ens.X[:, k, :]
        rl[:, k] = spec.leader_cost(times[k], xk, u)
        rf[:, k] = spec.follower_cost(times[k], xk, v)
    zeros = np.zeros((P, 1))
    return CostAccumulation(
        leader_rate=rl,
        follower_rate=rf,
        leader_running=np.concatenate([zeros, np.cumsum(rl * dt, axis=1)], axis=1),
        follower_running=np.concatenate([zeros, np.cumsum(rf * dt, axis=1)], axis=1),
        leader_terminal=spec.leader_terminal_at(ens.X[:, -1, :]),
        follower_terminal=spec.follower_terminal_at(ens.X[:, -1, :]),
    )


def dump_ensemble(ens: PathEnsemble, path: str | Path, max_paths: int | None = None) -> None:
    """Write (path, step, t, x_1..x_d, u_index, v_index); controls are -1 at the last step."""
    P = ens.n_paths if max_paths is None else min(max_paths, ens.n_paths)
    d, N = ens.dim, ens.n_steps
    times = ens.time_grid.times
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["path", "step", "t"] + [f"x_{i + 1}" for i in range(d)] + ["u_index", "v_index"])
        for p in range(P):
            for k in range(N + 1):
                ui = int(ens.u_index[p, k]) if k < N else -1
                vi = int(ens.v_index[p, k]) if k < N else -1
                w.writerow([p, k, repr(float(times[k]))] + [repr(float(c)) for c in ens.X[p, k]] + [ui, vi])
