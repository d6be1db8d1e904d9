"""CSV export of grid fields and JSON manifests for reproducible runs."""

from __future__ import annotations

import csv
import json
import platform
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .fields import PolicyField, ValueField
from .problem import Grids, ProblemSpec, SpaceGrid, TimeGrid, spec_digest, spec_to_dict


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def export_field(field: ValueField | PolicyField, path: str | Path) -> Path:
    """Write ``t,x,value`` (value fields) or ``t,x,u,v`` (policy fields, grid indices).

    Rows run over time first, then space.  Values carry 17 significant digits
    so a re-import reproduces them bitwise.  Missing policy components are
    written as -1.
    """
    path = Path(path)
    grids = field.grids
    times = grids.time.times
    x = grids.space.nodes
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if isinstance(field, ValueField):
            if not np.all(np.isfinite(field.values)):
                raise ValueError("cannot export a field with non-finite entries")
            w.writerow(["t", "x", "value"])
            for k in range(field.values.shape[0]):
                tk = _fmt(times[k])
                for j in range(x.size):
                    w.writerow([tk, _fmt(x[j]), _fmt(field.values[k, j])])
        elif isinstance(field, PolicyField):
            N, M = grids.time.n_steps, grids.space.n_points
            u = field.u_index if field.u_index is not None else np.full((N, M), -1)
            v = field.v_index if field.v_index is not None else np.full((N, M), -1)
            w.writerow(["t", "x", "u", "v"])
            for k in range(N):
                tk = _fmt(times[k])
                for j in range(M):
                    w.writerow([tk, _fmt(x[j]), int(u[k, j]), int(v[k, j])])
        else:
            raise TypeError("export_field expects a ValueField or PolicyField")
    return path


def import_field(path: str | Path, grids: Grids | None = None) -> ValueField | PolicyField:
    """Read a file written by :func:`export_field`.

    Value fields carry enough information to rebuild their grids.  Policy
    files lack the final time node, so ``grids`` should be supplied for them;
    otherwise the horizon is inferred from the first time step.
    """
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    data = np.array(body, dtype=float) if body else np.empty((0, len(header)))
    t_vals = np.unique(data[:, 0])
    x_vals = np.unique(data[:, 1])
    M = x_vals.size
    if header == ["t", "x", "value"]:
        N = t_vals.size - 1
        if grids is None:
            grids = Grids(TimeGrid(N, float(t_vals[-1])), SpaceGrid(float(x_vals[0]), float(x_vals[-1]), M))
        return ValueField(grids, data[:, 2].reshape(N + 1, M), kind="imported")
    if header == ["t", "x", "u", "v"]:
        N = t_vals.size
        if grids is None:
            horizon = float(t_vals[1]) * N if N > 1 else 1.0
            grids = Grids(TimeGrid(N, horizon), SpaceGrid(float(x_vals[0]), float(x_vals[-1]), M))
        u = data[:, 2].astype(np.int64).reshape(N, M)
        v = data[:, 3].astype(np.int64).reshape(N, M)
        return PolicyField(grids, u_index=None if np.all(u < 0) else u, v_index=None if np.all(v < 0) else v)
    raise ValueError(f"{path}: unrecognised header {header}")


def write_json(obj, path: str | Path) -> Path:
    path = Path(path)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")
    return path


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def grid_description(grids: Grids) -> dict:
    return {
        "n_steps": grids.time.n_steps,
        "horizon": grids.time.horizon,
        "x_min": grids.space.x_min,
        "x_max": grids.space.x_max,
        "n_points": grids.space.n_points,
    }


def manifest(subcommand: str, spec: ProblemSpec | None, config: dict) -> dict:
    """Everything needed to repeat a run; deliberately free of timestamps and thread counts."""
    out = {
        "subcommand": subcommand,
        "config": config,
        "versions": {
            "hierisk": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
        },
    }
    if spec is not None:
        out["spec"] = spec_to_dict(spec)
        out["spec_sha256"] = spec_digest(spec)
    return out
