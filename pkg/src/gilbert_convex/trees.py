"""Embedded trees, edge flows and the Gilbert / budgeted transport costs.

Trees are stored undirected.  A plan entry ``(i, j, mass)`` sends ``mass``
from vertex ``tree.sources[i]`` to vertex ``tree.sinks[j]`` along the unique
path (orbit) joining them.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .grid import MailingPlan, plan_marginals

CONSERVATION_TOL = 1e-12
BUDGET_TOL = 1e-12


class TreeError(ValueError):
    """The vertex/edge data do not describe a connected acyclic graph."""


@dataclass(frozen=True)
class EmbeddedTree:
    vertices: np.ndarray = field(repr=False)
    edges: np.ndarray = field(repr=False)
    sources: tuple[int, ...] = ()
    sinks: tuple[int, ...] = ()

    def __post_init__(self):
        v = np.atleast_2d(np.asarray(self.vertices, dtype=float))
        e = np.asarray(self.edges, dtype=int).reshape(-1, 2)
        v.setflags(write=False)
        e.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "edges", e)
        object.__setattr__(self, "sources", tuple(int(s) for s in self.sources))
        object.__setattr__(self, "sinks", tuple(int(s) for s in self.sinks))
        n = len(v)
        if e.size and (e.min() < 0 or e.max() >= n):
            raise TreeError("edge refers to a missing vertex")
        for t in self.sources + self.sinks:
            if not 0 <= t < n:
                raise TreeError(f"terminal vertex {t} is not a tree vertex")
        if len(e) != n - 1:
            raise TreeError(f"{len(e)} edges on {n} vertices: not a tree")
        if n > 1 and len(_component(self._adjacency, 0)) != n:
            raise TreeError("tree is disconnected")
        if np.any(self.lengths <= 0):
            raise TreeError("tree has a zero-length edge")

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def lengths(self) -> np.ndarray:
        if not len(self.edges):
            return np.zeros(0)
        d = self.vertices[self.edges[:, 0]] - self.vertices[self.edges[:, 1]]
        return np.linalg.norm(d, axis=1)

    @property
    def _adjacency(self) -> list[list[tuple[int, int]]]:
        adj: list[list[tuple[int, int]]] = [[] for _ in range(len(self.vertices))]
        for k, (a, b) in enumerate(self.edges):
            adj[a].append((b, k))
            adj[b].append((a, k))
        return adj

    def degree(self) -> np.ndarray:
        return np.bincount(self.edges.ravel(), minlength=self.n_vertices)

    def to_dict(self) -> dict:
        return {
            "schema": "gilbert-convex/tree/v1",
            "vertices": self.vertices.tolist(),
            "edges": self.edges.tolist(),
            "sources": list(self.sources),
            "sinks": list(self.sinks),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EmbeddedTree":
        return cls(np.asarray(data["vertices"], dtype=float),
                   np.asarray(data["edges"], dtype=int).reshape(-1, 2),
                   tuple(data.get("sources", ())), tuple(data.get("sinks", ())))


def _component(adj, start) -> set[int]:
    seen = {start}
    queue = deque([start])
    while queue:
        u = queue.popleft()
        for v, _ in adj[u]:
            if v not in seen:
                seen.add(v)
                queue.append(v)
    return seen


@dataclass(frozen=True)
class EdgeFlow:
    flow: np.ndarray

    def __array__(self, dtype=None, copy=None):
        return self.flow if dtype is None else self.flow.astype(dtype)


@dataclass(frozen=True)
class CostBudget:
    s: np.ndarray
    alpha: float

    def spent(self, tree: EmbeddedTree) -> float:
        return float(tree.lengths @ self.s)


def find_orbit(tree: EmbeddedTree, source: int, sink: int) -> list[int]:
    """Edge indices of the path from vertex ``source`` to vertex ``sink``, in order."""
    n = tree.n_vertices
    if not (0 <= source < n and 0 <= sink < n):
        raise TreeError("orbit endpoints must be tree vertices")
    if source == sink:
        return []
    adj = tree._adjacency
    parent = {source: (-1, -1)}
    queue = deque([source])
    while queue:
        u = queue.popleft()
        if u == sink:
            break
        for v, k in adj[u]:
            if v in parent:
                if parent[u][0] != v:
                    raise TreeError("cycle detected while searching for an orbit")
                continue
            parent[v] = (u, k)
            queue.append(v)
    if sink not in parent:
        raise TreeError("orbit endpoints lie in different components")
    path = []
    v = sink
    while v != source:
        u, k = parent[v]
        path.append(k)
        v = u
    return path[::-1]


def _orbits(tree: EmbeddedTree, plan: MailingPlan):
    for i, j, w in plan.entries:
        if i >= len(tree.sources) or j >= len(tree.sinks):
            raise TreeError(f"plan pair {(i, j)} has an endpoint missing from the tree")
        yield tree.sources[i], tree.sinks[j], w, find_orbit(tree, tree.sources[i], tree.sinks[j])


def compute_edge_flows(tree: EmbeddedTree, plan: MailingPlan) -> EdgeFlow:
    flow = np.zeros(len(tree.edges))
    for _, _, w, orbit in _orbits(tree, plan):
        flow[orbit] += w
    return EdgeFlow(flow)


def kirchhoff_residual(tree: EmbeddedTree, plan: MailingPlan) -> np.ndarray:
    """Per-vertex (outflow - inflow) - (f+ - f-), orienting each pair along its orbit.

    Zero everywhere for a valid tree in class (A, B, pi).
    """
    net = np.zeros(tree.n_vertices)
    for x, _, w, orbit in _orbits(tree, plan):
        u = x
        for k in orbit:
            a, b = tree.edges[k]
            v = b if a == u else a
            net[u] += w
            net[v] -= w
            u = v
    f_plus, f_minus = plan_marginals(plan, len(tree.sources), len(tree.sinks))
    supply = np.zeros(tree.n_vertices)
    np.add.at(supply, list(tree.sources), f_plus)
    np.add.at(supply, list(tree.sinks), -f_minus)
    return net - supply


def gilbert_cost(tree: EmbeddedTree, plan: MailingPlan, sigma: float) -> float:
    """``sum_e w(e)**sigma * |e|`` over edges that carry flow."""
    if not 0 <= sigma < 1:
        raise ValueError(f"sigma must lie in [0, 1), got {sigma}")
    w = compute_edge_flows(tree, plan).flow
    used = w > 0
    return float(np.sum(w[used] ** sigma * tree.lengths[used]))


def transport_cost(tree: EmbeddedTree, budget: CostBudget, plan: MailingPlan) -> float:
    spent = budget.spent(tree)
    if spent > 1 + BUDGET_TOL:
        raise ValueError(f"budget uses {spent!r} > 1")
    if np.any(budget.s < 0):
        raise ValueError("budget must be nonnegative")
    w = compute_edge_flows(tree, plan).flow
    used = w > 0
    if np.any(budget.s[used] == 0):
        return math.inf
    return float(np.sum(w[used] * tree.lengths[used] * budget.s[used] ** -budget.alpha))


def _power_flows(tree, plan, alpha):
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    w = compute_edge_flows(tree, plan).flow
    if not np.any(w > 0):
        raise ValueError("all edge flows are zero")
    return w ** (1.0 / (1.0 + alpha))


def optimal_budget(tree: EmbeddedTree, plan: MailingPlan, alpha: float) -> CostBudget:
    """Minimiser of the transport cost under ``sum |e| s(e) <= 1``.

    ``s(e) = w(e)**(1/(1+alpha)) / sum_e' |e'| w(e')**(1/(1+alpha))``.
    """
    q = _power_flows(tree, plan, alpha)
    return CostBudget(q / (tree.lengths @ q), float(alpha))


def min_transport_cost(tree: EmbeddedTree, plan: MailingPlan, alpha: float) -> float:
    q = _power_flows(tree, plan, alpha)
    return float((tree.lengths @ q) ** (1.0 + alpha))


def tree_from_points(points, edges, sources, sinks) -> EmbeddedTree:
    return EmbeddedTree(np.asarray(points, dtype=float), np.asarray(edges, dtype=int),
                        tuple(sources), tuple(sinks))
