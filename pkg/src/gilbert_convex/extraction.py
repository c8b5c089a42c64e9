"""Reading a network off a solved measure.

The support graph keeps grid nodes with ``m(z) >= tau * max m`` (terminals
always) and the lattice edges between them.  Components that hold no
terminal are dropped, non-terminal leaves are pruned repeatedly, and what is
left is either a tree, emitted as an ``EmbeddedTree``, or a graph with cycles,
which is reported as such and never broken.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .grid import GridSpec, MailingPlan, TerminalSet
from .trees import EmbeddedTree, compute_edge_flows, find_orbit, gilbert_cost

DEFAULT_TAU = 0.05


@dataclass(frozen=True)
class SupportGraph:
    nodes: np.ndarray          # grid node ids, sorted
    edges: np.ndarray          # (E, 2) grid node ids
    lengths: np.ndarray        # physical edge lengths
    weights: np.ndarray        # (m(z) + m(z')) / 2
    coords: np.ndarray         # one row per entry of ``nodes``
    terminals: tuple[int, ...]

    def __post_init__(self):
        if len(self.nodes) == 0:
            raise ValueError("support graph has no nodes")

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def _local(self) -> tuple[dict[int, int], np.ndarray]:
        index = {int(z): a for a, z in enumerate(self.nodes)}
        loc = np.array([[index[int(u)], index[int(v)]] for u, v in self.edges], dtype=int)
        return index, loc.reshape(-1, 2)

    def components(self) -> tuple[int, np.ndarray]:
        _, loc = self._local()
        n = self.n_nodes
        adj = sp.coo_matrix((np.ones(len(loc)), (loc[:, 0], loc[:, 1])), shape=(n, n))
        return connected_components(adj, directed=False)

    @property
    def cycle_count(self) -> int:
        n_comp, _ = self.components()
        return self.n_edges - self.n_nodes + n_comp

    def degree(self) -> np.ndarray:
        _, loc = self._local()
        return np.bincount(loc.ravel(), minlength=self.n_nodes)

    def subgraph(self, keep_nodes) -> "SupportGraph":
        keep = np.zeros(self.n_nodes, dtype=bool)
        index, loc = self._local()
        keep[[index[int(z)] for z in keep_nodes]] = True
        e_keep = keep[loc[:, 0]] & keep[loc[:, 1]] if len(loc) else np.zeros(0, dtype=bool)
        return SupportGraph(self.nodes[keep], self.edges[e_keep], self.lengths[e_keep],
                            self.weights[e_keep], self.coords[keep], self.terminals)


def support_graph(grid: GridSpec, m, terminals: TerminalSet, tau: float = DEFAULT_TAU,
                  ) -> SupportGraph:
    """Nodes with ``m >= tau * max m`` plus all terminals, with lattice edges among them."""
    if not 0 < tau <= 1:
        raise ValueError(f"tau must lie in (0, 1], got {tau}")
    mv = np.asarray(m, dtype=float)
    terms = tuple(dict.fromkeys(terminals.sources + terminals.sinks))
    inside = mv >= tau * mv.max()
    inside[list(terms)] = True
    nodes = np.flatnonzero(inside)
    e = grid.edges[inside[grid.edges[:, 0]] & inside[grid.edges[:, 1]]]
    return SupportGraph(
        nodes=nodes,
        edges=e,
        lengths=np.full(len(e), grid.spacing),
        weights=(mv[e[:, 0]] + mv[e[:, 1]]) / 2 if len(e) else np.zeros(0),
        coords=grid.coords[nodes],
        terminals=terms,
    )


@dataclass
class Treeification:
    """Outcome of ``prune_and_treeify``; ``tree`` is None unless the result is acyclic."""

    graph: SupportGraph
    tree: EmbeddedTree | None
    straight: EmbeddedTree | None
    n_components: int
    n_cycles: int
    n_pruned: int
    terminal_components: dict[int, int]
    reason: str = ""

    @property
    def is_tree(self) -> bool:
        return self.tree is not None

    def branch_vertices(self) -> list[tuple[list[float], int]]:
        """Coordinates and degree of every vertex with degree at least 3."""
        if self.tree is None:
            return []
        deg = self.tree.degree()
        return [(self.tree.vertices[v].tolist(), int(deg[v])) for v in np.flatnonzero(deg >= 3)]


def prune_and_treeify(graph: SupportGraph, terminals: TerminalSet) -> Treeification:
    """Drop terminal-free components, prune non-terminal leaves, convert if acyclic."""
    terms = set(graph.terminals) | set(terminals.sources) | set(terminals.sinks)
    missing = terms - set(graph.nodes.tolist())
    if missing:
        raise ValueError(f"terminal nodes {sorted(missing)} are not in the support graph")
    _, labels = graph.components()
    index, _ = graph._local()
    term_comp = {t: int(labels[index[t]]) for t in sorted(terms)}
    live = set(term_comp.values())
    g = graph.subgraph([z for z, lab in zip(graph.nodes, labels) if lab in live])
    if len(live) > 1:
        return Treeification(g, None, None, len(live), g.cycle_count, 0, term_comp,
                             "terminals lie in different components")

    pruned = 0
    while True:
        deg = g.degree()
        leaves = [z for z, d in zip(g.nodes.tolist(), deg) if d <= 1 and z not in terms]
        if not leaves:
            break
        pruned += len(leaves)
        g = g.subgraph(sorted(set(g.nodes.tolist()) - set(leaves)))
    cycles = g.cycle_count
    if cycles:
        return Treeification(g, None, None, 1, cycles, pruned, term_comp,
                             f"support contains {cycles} independent cycle(s)")
    tree = _as_tree(g, terminals)
    return Treeification(g, tree, _straighten(tree), 1, 0, pruned, term_comp)


def _as_tree(g: SupportGraph, terminals: TerminalSet) -> EmbeddedTree:
    index, loc = g._local()
    return EmbeddedTree(g.coords, loc,
                        tuple(index[s] for s in terminals.sources),
                        tuple(index[t] for t in terminals.sinks))


def _straighten(tree: EmbeddedTree) -> EmbeddedTree:
    """Replace every chain of degree-2 non-terminal vertices by one straight edge."""
    deg = tree.degree()
    keep = set(tree.sources) | set(tree.sinks) | set(np.flatnonzero(deg != 2).tolist())
    if tree.n_vertices == 1:
        return tree
    adj = tree._adjacency
    new_id = {v: a for a, v in enumerate(sorted(keep))}
    edges = set()
    for start in keep:
        for nxt, _ in adj[start]:
            prev, cur = start, nxt
            while cur not in keep:
                a, b = adj[cur]
                prev, cur = cur, (a[0] if a[0] != prev else b[0])
            edges.add(tuple(sorted((new_id[start], new_id[cur]))))
    verts = tree.vertices[sorted(keep)]
    return EmbeddedTree(verts, np.array(sorted(edges), dtype=int).reshape(-1, 2),
                        tuple(new_id[s] for s in tree.sources),
                        tuple(new_id[t] for t in tree.sinks))


@dataclass
class ExtractionReport:
    is_tree: bool
    n_components: int
    n_cycles: int
    n_pruned: int
    n_vertices: int
    n_edges: int
    branch_vertices: list = field(default_factory=list)
    orbit_lengths: dict = field(default_factory=dict)
    orbit_lengths_straight: dict = field(default_factory=dict)
    gilbert_cost: float = math.nan
    gilbert_cost_straight: float = math.nan
    total_length: float = math.nan
    total_length_straight: float = math.nan
    oracle_value: float | None = None
    oracle_gap: float | None = None
    reason: str = ""

    def to_dict(self) -> dict:
        out = asdict(self)
        for key in ("orbit_lengths", "orbit_lengths_straight"):
            out[key] = {f"{i},{j}": v for (i, j), v in self.orbit_lengths_items(key)}
        return out

    def orbit_lengths_items(self, key="orbit_lengths"):
        return sorted(getattr(self, key).items())


def _orbit_lengths(tree: EmbeddedTree, plan: MailingPlan) -> dict:
    lengths = tree.lengths
    return {(i, j): float(lengths[find_orbit(tree, tree.sources[i], tree.sinks[j])].sum())
            for i, j, _ in plan.entries}


def _used_length(tree: EmbeddedTree, plan: MailingPlan) -> float:
    flow = compute_edge_flows(tree, plan).flow
    return float(tree.lengths[flow > 0].sum())


def evaluate_extraction(tree: EmbeddedTree, plan: MailingPlan, sigma: float,
                        oracle_value: float | None = None,
                        straight: EmbeddedTree | None = None,
                        outcome: Treeification | None = None) -> ExtractionReport:
    """Gilbert cost and orbit lengths of an extracted tree.

    ``straight`` is the same tree with degree-2 chains straightened; when
    given, its cost is reported too.  With ``oracle_value`` the relative gap
    ``(cost - oracle) / oracle`` is recorded, using the straight-line cost when
    available.
    """
    report = ExtractionReport(
        is_tree=True, n_components=1, n_cycles=0,
        n_pruned=outcome.n_pruned if outcome else 0,
        n_vertices=tree.n_vertices, n_edges=len(tree.edges),
        orbit_lengths=_orbit_lengths(tree, plan),
        gilbert_cost=gilbert_cost(tree, plan, sigma),
        total_length=_used_length(tree, plan),
    )
    deg = tree.degree()
    report.branch_vertices = [(tree.vertices[v].tolist(), int(deg[v]))
                              for v in np.flatnonzero(deg >= 3)]
    if straight is not None:
        report.orbit_lengths_straight = _orbit_lengths(straight, plan)
        report.gilbert_cost_straight = gilbert_cost(straight, plan, sigma)
        report.total_length_straight = _used_length(straight, plan)
    if oracle_value is not None:
        ref = report.gilbert_cost_straight if straight is not None else report.gilbert_cost
        report.oracle_value = float(oracle_value)
        report.oracle_gap = (ref - oracle_value) / oracle_value
    return report


def failure_report(outcome: Treeification) -> ExtractionReport:
    return ExtractionReport(
        is_tree=False, n_components=outcome.n_components, n_cycles=outcome.n_cycles,
        n_pruned=outcome.n_pruned, n_vertices=outcome.graph.n_nodes,
        n_edges=outcome.graph.n_edges, reason=outcome.reason)


def extract(grid: GridSpec, m, terminals: TerminalSet, plan: MailingPlan, sigma: float,
            tau: float = DEFAULT_TAU, oracle_value: float | None = None,
            ) -> tuple[ExtractionReport, Treeification]:
    """Threshold, prune and evaluate in one call."""
    outcome = prune_and_treeify(support_graph(grid, m, terminals, tau), terminals)
    if not outcome.is_tree:
        return failure_report(outcome), outcome
    return evaluate_extraction(outcome.tree, plan, sigma, oracle_value, outcome.straight,
                               outcome), outcome
