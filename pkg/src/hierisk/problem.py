"""Problem definition: the hierarchical control datum, grids and validation."""

from __future__ import annotations

import functools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from . import exprlang
from .errors import ExprDomainError, ExprError, InadmissibleSpecError, SpecError

# Variables each coefficient may reference.
ALLOWED_VARIABLES = {
    "drift": {"t", "x", "u", "v"},
    "diffusion": {"t", "x", "u", "v"},
    "leader_running_cost": {"t", "x", "u"},
    "follower_running_cost": {"t", "x", "v"},
    "leader_terminal": {"x"},
    "follower_terminal": {"x"},
    "generator": {"t", "y", "z"},
    "obstacle": {"t", "x"},
}

NEVER_BINDING = "-1e6"


@dataclass(frozen=True)
class GeneratorFlags:
    convex: bool = False
    positively_homogeneous: bool = False
    zero_at_zero_z: bool = False


@dataclass(frozen=True)
class ProblemSpec:
    """Immutable description of a leader/follower risk-averse control problem.

    Coefficients are stored as expression source strings and compiled once
    on construction.  Vector controls are tuples; a control grid is a tuple
    of such points.  ``parameters`` holds named constants usable inside the
    expressions (e.g. ``mu``).
    """

    horizon: float
    x0: tuple
    drift: tuple
    diffusion: tuple
    control_grid_u: tuple
    control_grid_v: tuple
    state_dim: int = 1
    leader_running_cost: str = "0"
    follower_running_cost: str = "0"
    leader_terminal: str = "0"
    follower_terminal: str = "0"
    generator: str = "0"
    generator_z_mode: str = "componentwise"
    obstacle: str = NEVER_BINDING
    ellipticity_floor: float = 1e-6
    generator_flags: GeneratorFlags = GeneratorFlags()
    parameters: tuple = ()
    validation_box: tuple | None = None
    growth_exponent: float = 2.0
    _compiled: dict = field(default=None, init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        d = self.state_dim
        if not isinstance(d, int) or d < 1:
            raise SpecError("state_dim must be a positive integer")
        if not (self.horizon > 0 and math.isfinite(self.horizon)):
            raise SpecError("horizon must be positive")
        if not self.ellipticity_floor > 0:
            raise SpecError("ellipticity_floor must be positive")
        if len(self.x0) != d:
            raise SpecError(f"x0 must have length {d}")
        if len(self.drift) != d:
            raise SpecError(f"drift must have {d} entries")
        if len(self.diffusion) != d or any(len(row) != d for row in self.diffusion):
            raise SpecError(f"diffusion must be a {d}x{d} array of expressions")
        for name in ("control_grid_u", "control_grid_v"):
            grid = getattr(self, name)
            if len(grid) == 0:
                raise SpecError(f"empty control grid ({name})")
            if len({len(p) for p in grid}) != 1:
                raise SpecError(f"{name}: points must share one dimension")
            if len(set(grid)) != len(grid):
                raise SpecError(f"{name}: duplicate control points")
        if self.generator_z_mode not in ("norm", "componentwise"):
            raise SpecError("generator_z_mode must be 'norm' or 'componentwise'")
        if self.validation_box is not None and not self.validation_box[0] < self.validation_box[1]:
            raise SpecError("validation_box must be an increasing pair")
        consts = dict(self.parameters)
        compiled: dict[str, Any] = {}

        def comp(fname, src, label=None):
            label = label or fname
            try:
                e = exprlang.parse(src, consts)
            except ExprError as exc:
                raise SpecError(f"field {label}: {exc}") from exc
            extra = exprlang.variables(e) - ALLOWED_VARIABLES[fname]
            if extra:
                raise SpecError(f"field {label}: variable(s) {sorted(extra)} not allowed here")
            self._check_indices(e, label)
            return e

        compiled["drift"] = [comp("drift", s, f"drift[{i}]") for i, s in enumerate(self.drift)]
        compiled["diffusion"] = [
            [comp("diffusion", s, f"diffusion[{i}][{j}]") for j, s in enumerate(row)]
            for i, row in enumerate(self.diffusion)
        ]
        for fname in ("leader_running_cost", "follower_running_cost", "leader_terminal",
                      "follower_terminal", "generator", "obstacle"):
            compiled[fname] = comp(fname, getattr(self, fname))
        object.__setattr__(self, "_compiled", compiled)

    def _check_indices(self, e, label):
        dims = {"x": self.state_dim, "z": self.state_dim, "u": self.m_u, "v": self.m_v, "t": 1, "y": 1}
        if self.generator_z_mode == "norm":
            dims["z"] = 1
        stack = [e]
        while stack:
            node = stack.pop()
            if isinstance(node, exprlang.Var):
                if node.index > dims[node.name]:
                    raise SpecError(f"field {label}: {node.name}[{node.index}] exceeds dimension {dims[node.name]}")
            elif isinstance(node, exprlang.Neg):
                stack.append(node.operand)
            elif isinstance(node, exprlang.BinOp):
                stack.extend((node.left, node.right))
            elif isinstance(node, exprlang.Call):
                stack.extend(node.args)

    # -- derived attributes -------------------------------------------------

    @property
    def m_u(self) -> int:
        return len(self.control_grid_u[0])

    @property
    def m_v(self) -> int:
        return len(self.control_grid_v[0])

    @property
    def u_points(self) -> np.ndarray:
        return np.array(self.control_grid_u, dtype=float)

    @property
    def v_points(self) -> np.ndarray:
        return np.array(self.control_grid_v, dtype=float)

    def expr(self, name: str):
        return self._compiled[name]

    def depends_on(self, name: str, var: str) -> bool:
        c = self._compiled[name]
        if isinstance(c, list):
            flat = c if not isinstance(c[0], list) else [e for row in c for e in row]
            return any(var in exprlang.variables(e) for e in flat)
        return var in exprlang.variables(c)

    def replace(self, **changes) -> "ProblemSpec":
        """Copy of this problem with some fields changed (re-validated)."""
        kwargs = {f: getattr(self, f) for f in self.__dataclass_fields__ if f != "_compiled"}
        kwargs.update(changes)
        return ProblemSpec(**kwargs)

    # -- vectorised coefficient evaluation -----------------------------------
    #
    # ``x`` has shape (..., d); ``u`` and ``v`` have shape (..., m_u / m_v).
    # Everything broadcasts; results come back as full float arrays.

    @staticmethod
    def _components(a, n):
        a = np.asarray(a, dtype=float)
        if a.ndim == 0:
            return (a,) * n
        return tuple(a[..., i] for i in range(n))

    def _env(self, t=None, x=None, u=None, v=None):
        env = {}
        if t is not None:
            env["t"] = t
        if x is not None:
            env["x"] = self._components(x, self.state_dim)
        if u is not None:
            env["u"] = self._components(u, self.m_u)
        if v is not None:
            env["v"] = self._components(v, self.m_v)
        return env

    @staticmethod
    def _full(val, shape):
        return np.array(np.broadcast_to(np.asarray(val, dtype=float), shape))

    def _shape(self, *arrays, vector_last=(True,)):
        shapes = []
        for a, vec in zip(arrays, vector_last):
            if a is None:
                continue
            a = np.asarray(a)
            shapes.append(a.shape[:-1] if vec and a.ndim else a.shape)
        return np.broadcast_shapes(*shapes) if shapes else ()

    def drift_at(self, t, x, u, v) -> np.ndarray:
        """Drift vector, shape (..., d)."""
        shape = self._shape(t, x, u, v, vector_last=(False, True, True, True))
        env = self._env(t, x, u, v)
        return np.stack([self._full(exprlang.evaluate(e, env), shape) for e in self._compiled["drift"]], axis=-1)

    def diffusion_at(self, t, x, u, v) -> np.ndarray:
        """Diffusion matrix, shape (..., d, d)."""
        shape = self._shape(t, x, u, v, vector_last=(False, True, True, True))
        env = self._env(t, x, u, v)
        rows = [
            np.stack([self._full(exprlang.evaluate(e, env), shape) for e in row], axis=-1)
            for row in self._compiled["diffusion"]
        ]
        return np.stack(rows, axis=-2)

    def leader_cost(self, t, x, u) -> np.ndarray:
        shape = self._shape(t, x, u, vector_last=(False, True, True))
        return self._full(exprlang.evaluate(self._compiled["leader_running_cost"], self._env(t, x, u=u)), shape)

    def follower_cost(self, t, x, v) -> np.ndarray:
        shape = self._shape(t, x, v, vector_last=(False, True, True))
        return self._full(exprlang.evaluate(self._compiled["follower_running_cost"], self._env(t, x, v=v)), shape)

    def leader_terminal_at(self, x) -> np.ndarray:
        shape = self._shape(x)
        return self._full(exprlang.evaluate(self._compiled["leader_terminal"], self._env(x=x)), shape)

    def follower_terminal_at(self, x) -> np.ndarray:
        shape = self._shape(x)
        return self._full(exprlang.evaluate(self._compiled["follower_terminal"], self._env(x=x)), shape)

    def obstacle_at(self, t, x) -> np.ndarray:
        shape = self._shape(t, x, vector_last=(False, True))
        return self._full(exprlang.evaluate(self._compiled["obstacle"], self._env(t, x)), shape)

    def generator_at(self, t, y, z) -> np.ndarray:
        """g(t, y, z) with ``z`` of shape (..., d)."""
        z = np.asarray(z, dtype=float)
        y = np.asarray(y, dtype=float)
        shape = np.broadcast_shapes(np.shape(t), y.shape, z.shape[:-1])
        if self.generator_z_mode == "norm":
            zval = np.sqrt(np.sum(z * z, axis=-1))
        else:
            zval = tuple(z[..., i] for i in range(z.shape[-1]))
        env = {"t": t, "y": y, "z": zval}
        return self._full(exprlang.evaluate(self._compiled["generator"], env), shape)


# -- JSON loading --------------------------------------------------------------

_REQUIRED = ("horizon", "x0", "drift", "diffusion", "control_grid_u", "control_grid_v")


def _as_points(raw, name):
    if not isinstance(raw, list):
        raise SpecError(f"{name} must be a list")
    if len(raw) == 0:
        raise SpecError(f"empty control grid ({name})")
    return tuple(tuple(float(c) for c in p) if isinstance(p, (list, tuple)) else (float(p),) for p in raw)


def spec_from_dict(doc: Mapping[str, Any]) -> ProblemSpec:
    """Build a :class:`ProblemSpec` from a decoded JSON document."""
    missing = [k for k in _REQUIRED if k not in doc]
    if missing:
        raise SpecError(f"missing required field(s): {', '.join(missing)}")
    known = set(ProblemSpec.__dataclass_fields__) - {"_compiled"}
    unknown = set(doc) - known
    if unknown:
        raise SpecError(f"unknown field(s): {', '.join(sorted(unknown))}")
    d = int(doc.get("state_dim", 1))
    kw: dict[str, Any] = {"state_dim": d}
    try:
        horizon = float(doc["horizon"])
    except (TypeError, ValueError):
        raise SpecError("horizon must be a number") from None
    if not horizon > 0:
        raise SpecError("horizon must be positive")
    kw["horizon"] = horizon
    x0 = doc["x0"]
    kw["x0"] = tuple(float(c) for c in (x0 if isinstance(x0, list) else [x0]))
    drift = doc["drift"]
    kw["drift"] = tuple(drift) if isinstance(drift, list) else (drift,)
    diff = doc["diffusion"]
    if isinstance(diff, str):
        diff = [[diff]]
    elif diff and isinstance(diff[0], str):
        diff = [diff] if d == 1 else [[s] for s in diff]
    kw["diffusion"] = tuple(tuple(row) for row in diff)
    kw["control_grid_u"] = _as_points(doc["control_grid_u"], "control_grid_u")
    kw["control_grid_v"] = _as_points(doc["control_grid_v"], "control_grid_v")
    for key in ("leader_running_cost", "follower_running_cost", "leader_terminal", "follower_terminal",
                "generator", "obstacle", "generator_z_mode"):
        if key in doc:
            val = doc[key]
            kw[key] = repr(float(val)) if isinstance(val, (int, float)) else str(val)
    if "ellipticity_floor" in doc:
        kw["ellipticity_floor"] = float(doc["ellipticity_floor"])
    if "growth_exponent" in doc:
        kw["growth_exponent"] = float(doc["growth_exponent"])
    if "generator_flags" in doc:
        flags = doc["generator_flags"]
        bad = set(flags) - {"convex", "positively_homogeneous", "zero_at_zero_z"}
        if bad:
            raise SpecError(f"unknown generator flag(s): {sorted(bad)}")
        kw["generator_flags"] = GeneratorFlags(**{k: bool(v) for k, v in flags.items()})
    if "parameters" in doc:
        kw["parameters"] = tuple(sorted((str(k), float(v)) for k, v in doc["parameters"].items()))
    if doc.get("validation_box") is not None:
        lo, hi = doc["validation_box"]
        kw["validation_box"] = (float(lo), float(hi))
    return ProblemSpec(**kw)


def spec_to_dict(spec: ProblemSpec) -> dict:
    flags = spec.generator_flags
    out = {
        "state_dim": spec.state_dim,
        "horizon": spec.horizon,
        "x0": list(spec.x0),
        "drift": list(spec.drift),
        "diffusion": [list(r) for r in spec.diffusion],
        "leader_running_cost": spec.leader_running_cost,
        "follower_running_cost": spec.follower_running_cost,
        "leader_terminal": spec.leader_terminal,
        "follower_terminal": spec.follower_terminal,
        "generator": spec.generator,
        "generator_z_mode": spec.generator_z_mode,
        "obstacle": spec.obstacle,
        "control_grid_u": [list(p) for p in spec.control_grid_u],
        "control_grid_v": [list(p) for p in spec.control_grid_v],
        "ellipticity_floor": spec.ellipticity_floor,
        "generator_flags": {
            "convex": flags.convex,
            "positively_homogeneous": flags.positively_homogeneous,
            "zero_at_zero_z": flags.zero_at_zero_z,
        },
        "parameters": dict(spec.parameters),
        "growth_exponent": spec.growth_exponent,
    }
    if spec.validation_box is not None:
        out["validation_box"] = list(spec.validation_box)
    return out


def load_spec(path: str | Path) -> ProblemSpec:
    """Read a JSON problem file."""
    p = Path(path)
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise SpecError(f"{p}: malformed JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise SpecError(f"{p}: top level must be an object")
    return spec_from_dict(doc)


# -- grids ---------------------------------------------------------------------


@dataclass(frozen=True)
class TimeGrid:
    n_steps: int
    horizon: float

    def __post_init__(self):
        if self.n_steps < 1:
            raise SpecError("time grid needs at least one step")
        if not self.horizon > 0:
            raise SpecError("horizon must be positive")

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps

    @property
    def times(self) -> np.ndarray:
        t = np.arange(self.n_steps + 1) * self.horizon / self.n_steps
        t[-1] = self.horizon
        return t

    def t(self, k: int) -> float:
        return self.horizon if k == self.n_steps else k * self.horizon / self.n_steps

    def index_of(self, time: float, tol: float = 1e-12) -> int:
        """Grid index of ``time``; raises if it is not a node."""
        k = round(time / self.dt)
        if not 0 <= k <= self.n_steps or abs(self.t(k) - time) > tol * max(1.0, self.horizon):
            raise SpecError(f"time {time} is not a node of the time grid")
        return int(k)


@dataclass(frozen=True)
class SpaceGrid:
    x_min: float
    x_max: float
    n_points: int

    def __post_init__(self):
        if self.n_points < 3:
            raise SpecError("space grid needs at least 3 points")
        if self.n_points % 2 == 0:
            raise SpecError("space grid must have an odd number of points")
        if not self.x_min < self.x_max:
            raise SpecError("x_min must be below x_max")

    @classmethod
    def around(cls, x0: float, half_width: float, n_points: int) -> "SpaceGrid":
        """Symmetric grid with ``x0`` on the middle node."""
        return cls(x0 - half_width, x0 + half_width, n_points)

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / (self.n_points - 1)

    @property
    def nodes(self) -> np.ndarray:
        return self.x_min + np.arange(self.n_points) * self.dx

    def node_index(self, x: float) -> int:
        return int(np.clip(np.rint((x - self.x_min) / self.dx), 0, self.n_points - 1))

    def contains_on_node(self, x: float, tol: float = 1e-9) -> bool:
        j = self.node_index(x)
        return 0 < j < self.n_points - 1 and abs(self.nodes[j] - x) <= tol * max(1.0, abs(x))


@dataclass(frozen=True)
class Grids:
    time: TimeGrid
    space: SpaceGrid


def max_sampled_sigma(spec: ProblemSpec, n_samples: int = 512, seed: int = 0) -> float:
    pts = _sample_points(spec, n_samples, np.random.default_rng(seed))
    s = spec.diffusion_at(pts["t"], pts["x"], pts["u"], pts["v"])
    return float(np.max(np.abs(s)))


def default_space_grid(spec: ProblemSpec, n_points: int = 201) -> SpaceGrid:
    """Truncate the real line to x0 +/- 6 sigma_bar sqrt(T), sigma_bar the largest sampled |sigma|."""
    if spec.state_dim != 1:
        raise SpecError("grid solvers support state_dim = 1 only")
    sig = max_sampled_sigma(spec)
    if sig <= 0:
        raise SpecError("cannot size a space grid for zero diffusion; pass explicit bounds")
    return SpaceGrid.around(spec.x0[0], 6.0 * sig * math.sqrt(spec.horizon), n_points)


# -- validation ----------------------------------------------------------------


@dataclass
class ValidationReport:
    n_samples: int
    seed: int
    min_eigenvalue: float
    lipschitz_y: float
    lipschitz_z: float
    growth_ratios: dict
    terminal_gap: float
    violations: list
    notes: list

    @property
    def admissible(self) -> bool:
        return not self.violations

    def summary(self) -> dict:
        return {
            "admissible": self.admissible,
            "violations": list(self.violations),
            "notes": list(self.notes),
            "min_eigenvalue": self.min_eigenvalue,
            "lipschitz_y": self.lipschitz_y,
            "lipschitz_z": self.lipschitz_z,
            "growth_ratios": dict(self.growth_ratios),
            "terminal_gap": self.terminal_gap,
            "n_samples": self.n_samples,
            "seed": self.seed,
        }


def _state_box(spec: ProblemSpec):
    if spec.validation_box is not None:
        lo, hi = spec.validation_box
        return np.full(spec.state_dim, lo), np.full(spec.state_dim, hi)
    x0 = np.asarray(spec.x0)
    half = 3.0 * max(1.0, math.sqrt(spec.horizon))
    return x0 - half, x0 + half


def _sample_points(spec: ProblemSpec, n: int, rng: np.random.Generator, shrink: float = 1.0) -> dict:
    lo, hi = _state_box(spec)
    mid, half = (lo + hi) / 2, (hi - lo) / 2 * shrink
    x = rng.uniform(mid - half, mid + half, size=(n, spec.state_dim))
    t = rng.uniform(0.0, spec.horizon, size=n)
    u = spec.u_points[rng.integers(0, len(spec.control_grid_u), size=n)]
    v = spec.v_points[rng.integers(0, len(spec.control_grid_v), size=n)]
    ym = 10.0 * shrink
    y = rng.uniform(-ym, ym, size=n)
    z = rng.uniform(-ym, ym, size=(n, spec.state_dim))
    return {"t": t, "x": x, "u": u, "v": v, "y": y, "z": z}


def _evaluate_with_point(fn, pts, keys, label):
    try:
        return fn(*(pts[k] for k in keys))
    except ExprDomainError as exc:
        where = ""
        if exc.index is not None:
            where = " at " + ", ".join(f"{k}={np.asarray(pts[k])[exc.index].tolist()}" for k in keys)
        raise ExprDomainError(f"{label}: {exc}{where}", exc.index) from exc


def validate_spec(spec: ProblemSpec, n_samples: int = 512, seed: int = 0) -> ValidationReport:
    """Sample the coefficients and check the standing assumptions.

    The checks are statistical surrogates: ellipticity of sigma sigma^T,
    Lipschitz quotients of the generator in ``y`` and ``z``, linear/power
    growth of the coefficients, ``h(T, .) <= Psi_l`` and the declared generator
    flags.  A growth or Lipschitz quotient is flagged when its worst sampled
    value exceeds 1 and more than doubles between a box and the same box
    shrunk by a factor 4.
    """
    if n_samples < 100:
        raise SpecError("validate_spec needs n_samples >= 100")
    rng = np.random.default_rng(seed)
    pts = _sample_points(spec, n_samples, rng)
    inner = _sample_points(spec, n_samples, rng, shrink=0.25)
    violations: list[str] = []
    notes: list[str] = []
    T = spec.horizon

    # (a) ellipticity
    sig = _evaluate_with_point(spec.diffusion_at, pts, ("t", "x", "u", "v"), "diffusion")
    a = sig @ np.swapaxes(sig, -1, -2)
    eig = np.linalg.eigvalsh(a)[:, 0]
    min_eig = float(eig.min())
    if min_eig < spec.ellipticity_floor:
        violations.append(f"ellipticity floor not met: min eigenvalue {min_eig:.6g} < {spec.ellipticity_floor:g}")

    # (b) Lipschitz quotients of g
    def lip(p, q_rng):
        base = spec.generator_at(p["t"], p["y"], p["z"])
        dy = q_rng.uniform(-1, 1, size=p["y"].shape) * (np.abs(p["y"]).max() + 1) * 0.5
        dy[dy == 0] = 1e-3
        gy = spec.generator_at(p["t"], p["y"] + dy, p["z"])
        dz = q_rng.uniform(-1, 1, size=p["z"].shape) * (np.abs(p["z"]).max() + 1) * 0.5
        dzn = np.sqrt(np.sum(dz * dz, axis=-1))
        dzn[dzn == 0] = 1e-3
        gz = spec.generator_at(p["t"], p["y"], p["z"] + dz)
        return float(np.max(np.abs(gy - base) / np.abs(dy))), float(np.max(np.abs(gz - base) / dzn))

    ly, lz = lip(pts, rng)
    ly_in, lz_in = lip(inner, rng)
    for name, outer_q, inner_q in (("y", ly, ly_in), ("z", lz, lz_in)):
        if not math.isfinite(outer_q) or outer_q > 2.0 * max(inner_q, 1.0):
            violations.append(f"generator does not look Lipschitz in {name} (quotient {inner_q:.4g} -> {outer_q:.4g})")

    # (c) growth ratios
    growth = {}

    def ratio(vals, x, p):
        r = np.abs(vals)
        if r.ndim > 1:
            r = r.reshape(r.shape[0], -1).max(axis=1)
        xn = np.sqrt(np.sum(x * x, axis=-1))
        return float(np.max(r / (1.0 + xn ** p)))

    p_cost = spec.growth_exponent
    for label, fn, keys, power in (
        ("drift", spec.drift_at, ("t", "x", "u", "v"), 1.0),
        ("diffusion", spec.diffusion_at, ("t", "x", "u", "v"), 1.0),
        ("leader_running_cost", spec.leader_cost, ("t", "x", "u"), p_cost),
        ("follower_running_cost", spec.follower_cost, ("t", "x", "v"), p_cost),
        ("leader_terminal", spec.leader_terminal_at, ("x",), p_cost),
        ("follower_terminal", spec.follower_terminal_at, ("x",), p_cost),
    ):
        outer_r = ratio(_evaluate_with_point(fn, pts, keys, label), pts["x"], power)
        inner_r = ratio(_evaluate_with_point(fn, inner, keys, label), inner["x"], power)
        growth[label] = outer_r
        if not math.isfinite(outer_r) or outer_r > 2.0 * max(inner_r, 1.0):
            violations.append(f"{label} grows faster than the allowed rate (ratio {inner_r:.4g} -> {outer_r:.4g})")

    # (d) terminal consistency
    xT = pts["x"]
    hT = _evaluate_with_point(lambda x: spec.obstacle_at(T, x), pts, ("x",), "obstacle")
    psi = spec.leader_terminal_at(xT)
    gap = float(np.max(hT - psi))
    if gap > 1e-12:
        violations.append(f"obstacle exceeds leader terminal at T by {gap:.4g}")

    # (e) generator flags
    flags = spec.generator_flags
    zeros = np.zeros_like(pts["z"])
    g0 = spec.generator_at(pts["t"], pts["y"], zeros)
    if flags.zero_at_zero_z and np.max(np.abs(g0)) > 1e-12:
        violations.append("generator flag zero_at_zero_z declared but g(t, y, 0) != 0")
    if flags.convex:
        lam = rng.uniform(0, 1, size=n_samples)
        y2 = rng.uniform(-10, 10, size=n_samples)
        z2 = rng.uniform(-10, 10, size=pts["z"].shape)
        g1 = spec.generator_at(pts["t"], pts["y"], pts["z"])
        g2 = spec.generator_at(pts["t"], y2, z2)
        gm = spec.generator_at(pts["t"], lam * pts["y"] + (1 - lam) * y2,
                               lam[:, None] * pts["z"] + (1 - lam)[:, None] * z2)
        slack = gm - (lam * g1 + (1 - lam) * g2)
        if np.max(slack) > 1e-9 * (1 + np.max(np.abs(g1)) + np.max(np.abs(g2))):
            violations.append("generator flag convex declared but a sampled midpoint violates convexity")
    if flags.positively_homogeneous:
        lam = rng.uniform(0, 2, size=n_samples)
        g1 = spec.generator_at(pts["t"], pts["y"], pts["z"])
        gl = spec.generator_at(pts["t"], lam * pts["y"], lam[:, None] * pts["z"])
        if np.max(np.abs(gl - lam * g1)) > 1e-9 * (1 + np.max(np.abs(g1))):
            violations.append("generator flag positively_homogeneous declared but g(t, ly, lz) != l g(t, y, z)")

    overlap = set(spec.control_grid_u) & set(spec.control_grid_v)
    if overlap and spec.m_u == spec.m_v:
        notes.append(f"control grids share {len(overlap)} point(s); tolerated since u and v enter separately")
    if spec.m_u != spec.state_dim or spec.m_v != spec.state_dim:
        notes.append("control dimensions differ from the state dimension")

    return ValidationReport(
        n_samples=n_samples,
        seed=seed,
        min_eigenvalue=min_eig,
        lipschitz_y=ly,
        lipschitz_z=lz,
        growth_ratios=growth,
        terminal_gap=gap,
        violations=violations,
        notes=notes,
    )


@functools.lru_cache(maxsize=128)
def _cached_report(spec: ProblemSpec) -> ValidationReport:
    return validate_spec(spec)


def require_admissible(spec: ProblemSpec, override: bool = False) -> None:
    """Gate used by every solver entry point."""
    if override:
        return
    report = _cached_report(spec)
    if not report.admissible:
        raise InadmissibleSpecError("problem failed validation: " + "; ".join(report.violations))


def spec_digest(spec: ProblemSpec) -> str:
    import hashlib

    blob = json.dumps(spec_to_dict(spec), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def as_spec(obj: ProblemSpec | Mapping | str | Path) -> ProblemSpec:
    if isinstance(obj, ProblemSpec):
        return obj
    if isinstance(obj, Mapping):
        return spec_from_dict(obj)
    return load_spec(obj)


def one_d(spec: ProblemSpec) -> None:
    if spec.state_dim != 1:
        raise SpecError("this solver supports state_dim = 1 only")


__all__ = [
    "GeneratorFlags",
    "ProblemSpec",
    "TimeGrid",
    "SpaceGrid",
    "Grids",
    "ValidationReport",
    "load_spec",
    "spec_from_dict",
    "spec_to_dict",
    "validate_spec",
    "require_admissible",
    "default_space_grid",
    "spec_digest",
]

