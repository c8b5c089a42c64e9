"""Discrete geometry shared by every other module.

A grid ``Z`` is a regular lattice with axis-aligned nearest-neighbour
adjacency.  Nodes are numbered in C order over ``dims``; node coordinates are
``origin + index * spacing``.  Terminals live on grid nodes and the mailing
plan is given over (source, sink) index pairs into the terminal lists.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

PLAN_TOL = 1e-12


@dataclass(frozen=True)
class GridSpec:
    """Regular lattice with 2d-neighbourhood (fewer neighbours on faces)."""

    dims: tuple[int, ...]
    spacing: float = 1.0
    origin: tuple[float, ...] = ()

    def __post_init__(self):
        dims = tuple(int(n) for n in self.dims)
        if not 1 <= len(dims) <= 3:
            raise ValueError(f"grid must have 1 to 3 axes, got {len(dims)}")
        if any(n < 2 for n in dims):
            raise ValueError(f"every axis needs at least 2 nodes, got dims={dims}")
        if not self.spacing > 0:
            raise ValueError(f"spacing must be positive, got {self.spacing}")
        origin = tuple(float(o) for o in self.origin) or (0.0,) * len(dims)
        if len(origin) != len(dims):
            raise ValueError("origin must have one coordinate per axis")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", float(self.spacing))
        object.__setattr__(self, "origin", origin)

    @property
    def ndim(self) -> int:
        return len(self.dims)

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.dims))

    @cached_property
    def edges(self) -> np.ndarray:
        """Undirected neighbour pairs ``(u, v)`` with ``u < v``, shape (E, 2)."""
        ids = np.arange(self.n_nodes).reshape(self.dims)
        parts = []
        for axis in range(self.ndim):
            lo = np.take(ids, np.arange(self.dims[axis] - 1), axis=axis)
            hi = np.take(ids, np.arange(1, self.dims[axis]), axis=axis)
            parts.append(np.stack([lo.ravel(), hi.ravel()], axis=1))
        edges = np.concatenate(parts)
        edges.setflags(write=False)
        return edges

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @cached_property
    def degree(self) -> np.ndarray:
        """|N(z)| per node."""
        deg = np.bincount(self.edges.ravel(), minlength=self.n_nodes).astype(float)
        deg.setflags(write=False)
        return deg

    @cached_property
    def incidence(self) -> sp.csr_matrix:
        """Signed edge-node incidence, +1 at ``edges[:, 0]`` and -1 at ``edges[:, 1]``."""
        e = np.arange(self.n_edges)
        data = np.r_[np.ones(self.n_edges), -np.ones(self.n_edges)]
        return sp.csr_matrix(
            (data, (np.r_[e, e], self.edges.T.ravel())),
            shape=(self.n_edges, self.n_nodes),
        )

    @cached_property
    def node_edge(self) -> sp.csr_matrix:
        """Unsigned node-edge incidence, shape (N, E)."""
        return abs(self.incidence).T.tocsr()

    @cached_property
    def coords(self) -> np.ndarray:
        idx = np.stack(np.unravel_index(np.arange(self.n_nodes), self.dims), axis=1)
        pts = np.asarray(self.origin) + self.spacing * idx
        pts.setflags(write=False)
        return pts

    def neighbors(self, z: int) -> list[int]:
        e = self.edges
        return sorted(np.r_[e[e[:, 0] == z, 1], e[e[:, 1] == z, 0]].tolist())

    def node_at(self, index: Sequence[int]) -> int:
        return int(np.ravel_multi_index(tuple(index), self.dims))

    def snap(self, point: Sequence[float]) -> tuple[int, float]:
        """Nearest grid node to ``point`` and the Euclidean snap distance."""
        x = np.asarray(point, dtype=float)
        if x.shape != (self.ndim,):
            raise ValueError(f"point {list(point)} does not have {self.ndim} coordinates")
        idx = np.rint((x - np.asarray(self.origin)) / self.spacing).astype(int)
        idx = np.clip(idx, 0, np.asarray(self.dims) - 1)
        node = self.node_at(idx)
        return node, float(np.linalg.norm(self.coords[node] - x))

    def edge_weights(self, m: np.ndarray) -> np.ndarray:
        """Per-edge coefficient ``m(z)/|N(z)| + m(z')/|N(z')|``."""
        w = np.asarray(m, dtype=float) / self.degree
        return w[self.edges[:, 0]] + w[self.edges[:, 1]]


def build_grid(dims: Iterable[int], spacing: float = 1.0, origin: Sequence[float] = ()) -> GridSpec:
    return GridSpec(tuple(dims), spacing, tuple(origin))


@dataclass(frozen=True)
class TerminalSet:
    sources: tuple[int, ...]
    sinks: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "sources", tuple(int(s) for s in self.sources))
        object.__setattr__(self, "sinks", tuple(int(s) for s in self.sinks))
        for name, nodes in (("sources", self.sources), ("sinks", self.sinks)):
            if len(set(nodes)) != len(nodes):
                raise ValueError(f"duplicate node in {name}: {nodes}")

    def validate(self, grid: GridSpec) -> None:
        for node in self.sources + self.sinks:
            if not 0 <= node < grid.n_nodes:
                raise ValueError(f"terminal node {node} is not a node of the grid")


@dataclass(frozen=True)
class MailingPlan:
    """Prescribed plan: ``entries`` of (source index, sink index, mass)."""

    entries: tuple[tuple[int, int, float], ...]

    def __post_init__(self):
        entries = tuple((int(i), int(j), float(w)) for i, j, w in self.entries)
        if not entries:
            raise ValueError("plan has no entries")
        keys = [(i, j) for i, j, _ in entries]
        if len(set(keys)) != len(keys):
            raise ValueError("plan has duplicate (source, sink) keys")
        for i, j, w in entries:
            if i < 0 or j < 0:
                raise ValueError(f"negative terminal index in plan entry {(i, j)}")
            if not (w > 0 and np.isfinite(w)):
                raise ValueError(f"plan mass must be positive, got {w} at {(i, j)}")
        total = float(np.sum([w for *_, w in entries]))
        if abs(total - 1.0) > PLAN_TOL:
            raise ValueError(f"plan masses sum to {total!r}, expected 1")
        object.__setattr__(self, "entries", entries)

    @classmethod
    def from_dict(cls, pairs: dict[tuple[int, int], float]) -> "MailingPlan":
        return cls(tuple((i, j, w) for (i, j), w in pairs.items()))

    @property
    def n_sources(self) -> int:
        return max(i for i, _, _ in self.entries) + 1

    @property
    def n_sinks(self) -> int:
        return max(j for _, j, _ in self.entries) + 1

    def check_terminals(self, terminals: TerminalSet) -> None:
        if self.n_sources > len(terminals.sources) or self.n_sinks > len(terminals.sinks):
            raise ValueError("plan references a terminal index outside the terminal set")


def plan_marginals(plan: MailingPlan, n_sources: int | None = None,
                   n_sinks: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Row and column sums ``f+`` (per source) and ``f-`` (per sink)."""
    f_plus = np.zeros(n_sources or plan.n_sources)
    f_minus = np.zeros(n_sinks or plan.n_sinks)
    for i, j, w in plan.entries:
        f_plus[i] += w
        f_minus[j] += w
    return f_plus, f_minus


@dataclass(frozen=True)
class SimplexWeights:
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 1 or v.size == 0:
            raise ValueError("weights must be a non-empty vector")
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise ValueError("weights must be finite and nonnegative")
        if abs(v.sum() - 1.0) > PLAN_TOL:
            raise ValueError(f"weights sum to {v.sum()!r}, expected 1")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __len__(self):
        return len(self.values)

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    @classmethod
    def normalized(cls, values) -> "SimplexWeights":
        v = np.asarray(values, dtype=float)
        return cls(v / v.sum())


def uniform_weights(grid: GridSpec) -> SimplexWeights:
    return SimplexWeights(np.full(grid.n_nodes, 1.0 / grid.n_nodes))


@dataclass(frozen=True)
class PairTable:
    """Active plan pairs resolved to grid nodes, in plan order."""

    keys: tuple[tuple[int, int], ...]
    sources: np.ndarray
    sinks: np.ndarray
    mass: np.ndarray

    def __len__(self):
        return len(self.keys)

    def rhs(self, n_nodes: int) -> np.ndarray:
        """Indicator of x_i minus indicator of y_j, one row per pair."""
        b = np.zeros((len(self), n_nodes))
        rows = np.arange(len(self))
        np.add.at(b, (rows, self.sources), 1.0)
        np.add.at(b, (rows, self.sinks), -1.0)
        return b


def pair_table(terminals: TerminalSet, plan: MailingPlan) -> PairTable:
    plan.check_terminals(terminals)
    keys = tuple((i, j) for i, j, _ in plan.entries)
    return PairTable(
        keys=keys,
        sources=np.array([terminals.sources[i] for i, _ in keys], dtype=int),
        sinks=np.array([terminals.sinks[j] for _, j in keys], dtype=int),
        mass=np.array([w for *_, w in plan.entries]),
    )


def single_pair(x: int, y: int) -> PairTable:
    return pair_table(TerminalSet((x,), (y,)), MailingPlan(((0, 0, 1.0),)))
