"""Grid-indexed containers shared by the PDE, hierarchy and simulation layers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .problem import Grids


@dataclass
class ValueField:
    """Values on the (N+1) x M time-space grid.

    ``kind`` records which equation produced the field (``"follower"``,
    ``"leader"``, ``"residual"`` ...); ``meta`` carries free-form notes such as
    the penalty parameter or the leader control that was held fixed.
    """

    grids: Grids
    values: np.ndarray
    kind: str = "value"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        shape = (self.grids.time.n_steps + 1, self.grids.space.n_points)
        if self.values.shape != shape:
            raise ValueError(f"field shape {self.values.shape} does not match grid {shape}")

    def at(self, k: int, x: float) -> float:
        return float(self.values[k, self.grids.space.node_index(x)])

    def value_at_origin(self, x0: float) -> float:
        return self.at(0, x0)


@dataclass
class PolicyField:
    """Feedback controls as indices into the control grids, shape N x M.

    Either array may be ``None`` when the corresponding agent is not
    represented (e.g. a follower-only solve under a constant leader control
    still records the constant as a full array).
    """

    grids: Grids
    u_index: np.ndarray | None = None
    v_index: np.ndarray | None = None

    def lookup(self, t: float, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Control indices at time ``t`` for states ``x`` (nearest node, clamped to the interior)."""
        tg, sg = self.grids.time, self.grids.space
        k = min(int(np.floor(t / tg.dt + 1e-9)), tg.n_steps - 1)
        j = np.clip(np.rint((np.asarray(x) - sg.x_min) / sg.dx).astype(np.int64), 1, sg.n_points - 2)
        u = self.u_index[k, j] if self.u_index is not None else np.zeros_like(j)
        v = self.v_index[k, j] if self.v_index is not None else np.zeros_like(j)
        return u, v

    def validate(self, n_u: int, n_v: int) -> None:
        for name, arr, n in (("u_index", self.u_index, n_u), ("v_index", self.v_index, n_v)):
            if arr is None:
                continue
            if arr.shape != (self.grids.time.n_steps, self.grids.space.n_points):
                raise ValueError(f"{name} has shape {arr.shape}")
            if arr.min() < 0 or arr.max() >= n:
                raise ValueError(f"{name} holds an index outside the control grid")


@dataclass
class BestResponseTable:
    """Follower's minimising v index for every (step, node, leader control)."""

    grids: Grids
    table: np.ndarray  # N x M x n_u, integer

    def response(self, k: int, j, i):
        return self.table[k, j, i]
