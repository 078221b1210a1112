"""Time grids and the flat numbering of collocation nodes and decision variables."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .collocation import scheme


class MeshError(ValueError):
    pass


@dataclass(frozen=True)
class Mesh:
    """Interval boundaries ``t_0 < ... < t_f`` and stage counts per interval."""

    boundaries: np.ndarray
    stages: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.boundaries, dtype=float)
        s = np.asarray(self.stages, dtype=int)
        if b.ndim != 1 or b.size < 2:
            raise MeshError("a mesh needs at least one interval")
        if not np.all(np.diff(b) > 0):
            raise MeshError("interval boundaries must be strictly increasing")
        if s.shape != (b.size - 1,) or np.any(s < 1):
            raise MeshError("need one stage count >= 1 per interval")
        b.setflags(write=False)
        s.setflags(write=False)
        object.__setattr__(self, "boundaries", b)
        object.__setattr__(self, "stages", s)

    @property
    def n_intervals(self) -> int:
        return self.stages.size

    @property
    def t0(self) -> float:
        return float(self.boundaries[0])

    @property
    def tf(self) -> float:
        return float(self.boundaries[-1])

    @property
    def steps(self) -> np.ndarray:
        return np.diff(self.boundaries)

    @property
    def node_count(self) -> int:
        return 1 + int(self.stages.sum())

    @classmethod
    def from_boundaries(cls, boundaries, stages) -> "Mesh":
        boundaries = np.asarray(boundaries, dtype=float)
        stages = np.broadcast_to(np.asarray(stages, dtype=int), (boundaries.size - 1,))
        return cls(boundaries, stages.copy())


def build_equidistant(t0: float, tf: float, n_intervals: int, m: int) -> Mesh:
    if not tf > t0:
        raise MeshError(f"horizon must be positive, got [{t0}, {tf}]")
    if n_intervals < 1:
        raise MeshError("need at least one interval")
    if m < 1:
        raise MeshError("need at least one stage")
    return Mesh(np.linspace(t0, tf, n_intervals + 1), np.full(n_intervals, m))


def interval_of_nodes(mesh: Mesh):
    """For every collocation node (all nodes except t_00): interval index and stage j >= 1."""
    interval = np.repeat(np.arange(mesh.n_intervals), mesh.stages)
    offsets = np.concatenate(([0], np.cumsum(mesh.stages)[:-1]))
    stage = np.arange(interval.size) - offsets[interval] + 1
    return interval, stage


def node_times(mesh: Mesh, schemes=None) -> np.ndarray:
    """All node times t_00, t_01, ..., with shared interval boundaries listed once."""
    times = np.empty(mesh.node_count)
    times[0] = mesh.t0
    k = 1
    for i, m in enumerate(mesh.stages):
        sch = schemes[m] if schemes is not None else scheme(int(m))
        ti, dt = mesh.boundaries[i], mesh.boundaries[i + 1] - mesh.boundaries[i]
        times[k:k + m] = ti + sch.nodes * dt
        times[k + m - 1] = mesh.boundaries[i + 1]
        k += m
    return times


@dataclass(frozen=True)
class DecisionLayout:
    """Flat decision vector: node-major states, then the trailing parameters."""

    mesh: Mesh
    d_x: int
    d_p: int
    _starts: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        starts = np.concatenate(([1], 1 + np.cumsum(self.mesh.stages)[:-1]))
        object.__setattr__(self, "_starts", starts)

    @property
    def node_count(self) -> int:
        return self.mesh.node_count

    @property
    def var_count(self) -> int:
        return self.node_count * self.d_x + self.d_p

    @property
    def param_offset(self) -> int:
        return self.node_count * self.d_x

    def node_index(self, i, j):
        """Flat node number of (interval i, stage j); stage 0 is the previous interval's end."""
        i = np.asarray(i)
        j = np.asarray(j)
        if np.any((i < 0) | (i >= self.mesh.n_intervals)):
            raise IndexError("interval out of range")
        if np.any((j < 0) | (j > self.mesh.stages[i])):
            raise IndexError("stage out of range")
        return np.where(j == 0, self._starts[i] - 1, self._starts[i] + j - 1)

    def node_of(self, node):
        """Inverse of ``node_index`` choosing j >= 1 except for the initial node (0, 0)."""
        node = np.asarray(node)
        i = np.searchsorted(self._starts, node, side="right") - 1
        i = np.maximum(i, 0)
        j = np.where(node == 0, 0, node - self._starts[i] + 1)
        return i, j

    def var_index(self, node, state):
        return np.asarray(node) * self.d_x + np.asarray(state)

    def param_index(self, k):
        return self.param_offset + np.asarray(k)

    def locate(self, flat):
        """Flat variable index -> ('state', node, state) or ('param', k)."""
        flat = int(flat)
        if not 0 <= flat < self.var_count:
            raise IndexError(flat)
        if flat >= self.param_offset:
            return ("param", flat - self.param_offset)
        node, state = divmod(flat, self.d_x)
        return ("state", node, state)
