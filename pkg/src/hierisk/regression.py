"""Cross-sectional least-squares projections used for conditional expectations.

Two bases are offered:

``poly``
    Tensor-product monomials of the standardised state, each coordinate up to
    ``degree``.  Columns with no variance in the sample (e.g. at t = 0 where
    every path sits at x0) are dropped, which degrades gracefully to the
    sample mean.

``spline``
    Piecewise-linear hat functions (d = 1 only) on empirical quantile knots
    merged with equally spaced knots.
    The Gram matrix is tridiagonal, so a fit is O(P).  Hat functions form a
    partition of unity and reproduce affine functions exactly.

Targets are centred before fitting, so adding a constant to a target shifts
the fitted values by exactly that constant.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np
from scipy import linalg

from .errors import RegressionError

_COND_LIMIT = 1e12


@dataclass(frozen=True)
class Basis:
    kind: str = "poly"
    degree: int = 2
    knots: int = 20

    def describe(self) -> str:
        if self.kind == "poly":
            return f"poly(degree={self.degree})"
        return f"spline(knots={self.knots})"

    def projector(self, x: np.ndarray, step: int) -> "Projector":
        """Build the projector for the cross-section ``x`` (shape P x d)."""
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if self.kind == "poly":
            return _PolyProjector(x, self.degree, step)
        if self.kind == "spline":
            if x.shape[1] != 1:
                raise RegressionError("spline basis supports one state dimension only", step)
            return _SplineProjector(x[:, 0], self.knots, step)
        raise ValueError(f"unknown basis {self.kind!r}")


def make_basis(kind: str = "poly", degree: int = 2, knots: int = 20) -> Basis:
    if kind not in ("poly", "spline"):
        raise ValueError(f"unknown basis {kind!r}")
    if degree < 0 or knots < 2:
        raise ValueError("degree must be >= 0 and knots >= 2")
    return Basis(kind, degree, knots)


class Projector:
    """Least-squares projection onto a fixed basis evaluated on one sample."""

    n_paths: int

    def fit(self, targets: np.ndarray) -> np.ndarray:
        """Fitted values for one target (P,) or several (P, q)."""
        targets = np.asarray(targets, dtype=float)
        single = targets.ndim == 1
        tt = targets[:, None] if single else targets
        mean = tt.mean(axis=0)
        fitted = self._fit_centered(tt - mean) + mean
        if not np.all(np.isfinite(fitted)):
            raise RegressionError("non-finite regression output", self.step)
        return fitted[:, 0] if single else fitted

    def fit_weighted(self, target: np.ndarray, weights: np.ndarray) -> np.ndarray:
        """Fitted values of the weighted least-squares problem for one target."""
        target = np.asarray(target, dtype=float)
        fitted = self._fit_weighted(target, np.asarray(weights, dtype=float))
        if not np.all(np.isfinite(fitted)):
            raise RegressionError("non-finite regression output", self.step)
        return fitted

    def _fit_centered(self, targets: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _fit_weighted(self, target: np.ndarray, weights: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class _PolyProjector(Projector):
    def __init__(self, x: np.ndarray, degree: int, step: int):
        self.step = step
        self.n_paths = x.shape[0]
        mu = x.mean(axis=0)
        sd = x.std(axis=0)
        live = sd > 1e-12 * np.maximum(1.0, np.abs(mu))
        zs = (x[:, live] - mu[live]) / sd[live]
        cols = []
        for powers in product(range(degree + 1), repeat=zs.shape[1]):
            if sum(powers) == 0:
                continue
            c = np.ones(self.n_paths)
            for i, p in enumerate(powers):
                if p:
                    c = c * zs[:, i] ** p
            cols.append(c)
        if not cols:
            self.B = None
            return
        B = np.column_stack(cols)
        B = B - B.mean(axis=0)
        scale = np.sqrt(np.mean(B * B, axis=0))
        keep = scale > 1e-12
        if not np.any(keep):
            self.B = None
            return
        self.B = B[:, keep] / scale[keep]
        G = self.B.T @ self.B / self.n_paths
        w = np.linalg.eigvalsh(G)
        if w[0] <= 0 or w[-1] / w[0] > _COND_LIMIT:
            raise RegressionError("rank-deficient regression design", step)
        self.cho = linalg.cho_factor(G)

    def _fit_centered(self, targets):
        if self.B is None:
            return np.zeros_like(targets)
        rhs = self.B.T @ targets / self.n_paths
        coef = linalg.cho_solve(self.cho, rhs)
        return self.B @ coef


    def _fit_weighted(self, target, weights):
        wsum = weights.sum()
        if wsum <= 0:
            raise RegressionError("weights sum to zero", self.step)
        if self.B is None:
            return np.full_like(target, np.dot(weights, target) / wsum)
        full = np.column_stack([np.ones(self.n_paths), self.B])
        G = full.T @ (weights[:, None] * full) / self.n_paths
        w = np.linalg.eigvalsh(G)
        if w[0] <= 0 or w[-1] / w[0] > _COND_LIMIT:
            raise RegressionError("rank-deficient weighted regression", self.step)
        coef = linalg.cho_solve(linalg.cho_factor(G), full.T @ (weights * target) / self.n_paths)
        return full @ coef


def _knots(x: np.ndarray, n: int, min_support: int = 10) -> np.ndarray:
    """Quantile knots merged with equally spaced ones, thinned where data is scarce.

    Quantile knots alone leave the sparse tails with one very wide interval,
    where a linear piece cannot follow a curved target.  Interior knots whose
    two adjacent intervals hold fewer than ``min_support`` points are removed.
    """
    lo, hi = x.min(), x.max()
    if hi <= lo:
        return np.array([lo])
    knots = np.unique(np.concatenate([np.quantile(x, np.linspace(0.0, 1.0, n)), np.linspace(lo, hi, n)]))
    xs = np.sort(x)
    while knots.size > 2:
        counts = np.diff(np.searchsorted(xs, knots, side="left"))
        counts[-1] += 1  # the maximum sits on the last knot
        support = counts[:-1] + counts[1:]  # interior knots 1..K-2
        thin = np.flatnonzero(support < min_support)
        if thin.size == 0:
            break
        knots = np.delete(knots, thin[np.argmin(support[thin])] + 1)
    return knots


class _SplineProjector(Projector):
    def __init__(self, x: np.ndarray, n_knots: int, step: int):
        self.step = step
        self.n_paths = x.size
        knots = _knots(x, n_knots)
        self.knots = knots
        if knots.size < 2:
            self.constant = True
            return
        self.constant = False
        i = np.clip(np.searchsorted(knots, x, side="right") - 1, 0, knots.size - 2)
        h = knots[i + 1] - knots[i]
        wr = (x - knots[i]) / h
        wl = 1.0 - wr
        self.i, self.wl, self.wr = i, wl, wr
        K = knots.size
        diag = np.bincount(i, wl * wl, minlength=K) + np.bincount(i + 1, wr * wr, minlength=K)
        off = np.bincount(i, wl * wr, minlength=K)[: K - 1]
        ab = np.zeros((2, K))
        ab[0, 1:] = off
        ab[1] = diag
        self.ab = ab
        if np.any(diag <= 0):
            raise RegressionError("empty spline support", step)

    def _fit_centered(self, targets):
        if self.constant:
            return np.zeros_like(targets)
        K = self.knots.size
        rhs = np.empty((K, targets.shape[1]))
        for q in range(targets.shape[1]):
            y = targets[:, q]
            rhs[:, q] = np.bincount(self.i, self.wl * y, minlength=K) + np.bincount(self.i + 1, self.wr * y, minlength=K)
        try:
            coef = linalg.solveh_banded(self.ab, rhs)
        except linalg.LinAlgError:
            raise RegressionError("rank-deficient spline design", self.step) from None
        return self.wl[:, None] * coef[self.i] + self.wr[:, None] * coef[self.i + 1]

    def _fit_weighted(self, target, weights):
        if self.constant:
            wsum = weights.sum()
            if wsum <= 0:
                raise RegressionError("weights sum to zero", self.step)
            return np.full_like(target, np.dot(weights, target) / wsum)
        K = self.knots.size
        i, wl, wr = self.i, self.wl, self.wr
        diag = np.bincount(i, weights * wl * wl, minlength=K) + np.bincount(i + 1, weights * wr * wr, minlength=K)
        off = np.bincount(i, weights * wl * wr, minlength=K)[: K - 1]
        ab = np.zeros((2, K))
        ab[0, 1:] = off
        ab[1] = diag
        wy = weights * target
        rhs = np.bincount(i, wl * wy, minlength=K) + np.bincount(i + 1, wr * wy, minlength=K)
        try:
            coef = linalg.solveh_banded(ab, rhs)
        except linalg.LinAlgError:
            raise RegressionError("rank-deficient weighted spline design", self.step) from None
        return wl * coef[i] + wr * coef[i + 1]
