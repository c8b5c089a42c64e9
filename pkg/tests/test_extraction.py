import math

import numpy as np
import pytest

from gilbert_convex.extraction import (evaluate_extraction, extract, prune_and_treeify,
                                       support_graph)
from gilbert_convex.grid import MailingPlan, TerminalSet, build_grid
from gilbert_convex.trees import gilbert_cost, tree_from_points

ONE = MailingPlan(((0, 0, 1.0),))
HALF = MailingPlan(((0, 0, 0.5), (1, 0, 0.5)))


def mass_on(grid, cells, background=1e-6):
    m = np.full(grid.n_nodes, background)
    for c in cells:
        m[grid.node_at(c)] = 1.0
    return m / m.sum()


@pytest.fixture
def t_shape():
    """7x7 grid; sources (0,1), (0,5); sink (6,3); legs meet at (3,3)."""
    g = build_grid((7, 7))
    cells = [(0, j) for j in range(1, 6)] + [(i, 3) for i in range(0, 7)]
    cells = [(0, 1), (1, 1), (2, 1), (3, 1), (3, 2), (3, 3), (0, 5), (1, 5), (2, 5), (3, 5),
             (3, 4), (4, 3), (5, 3), (6, 3)]
    terminals = TerminalSet((g.node_at((0, 1)), g.node_at((0, 5))), (g.node_at((6, 3)),))
    return g, mass_on(g, cells), terminals


def test_support_graph_path():
    g = build_grid((5, 5))
    m = mass_on(g, [(2, j) for j in range(5)])
    terms = TerminalSet((g.node_at((2, 0)),), (g.node_at((2, 4)),))
    sg = support_graph(g, m, terms, 0.05)
    assert sorted(sg.nodes.tolist()) == [g.node_at((2, j)) for j in range(5)]
    assert sg.n_edges == 4 and np.all(sg.lengths == 1.0)


def test_support_graph_full_threshold_keeps_argmax_and_terminals():
    g = build_grid((4, 4))
    m = np.random.default_rng(0).dirichlet(np.ones(16))
    terms = TerminalSet((0,), (15,))
    sg = support_graph(g, m, terms, 1.0)
    assert set(sg.nodes.tolist()) == {int(np.argmax(m)), 0, 15}


def test_threshold_monotone():
    g = build_grid((6, 6))
    m = np.random.default_rng(1).dirichlet(np.ones(36))
    terms = TerminalSet((0,), (35,))
    previous = None
    for tau in (0.01, 0.1, 0.3, 0.6, 1.0):
        nodes = set(support_graph(g, m, terms, tau).nodes.tolist())
        if previous is not None:
            assert nodes <= previous
        previous = nodes
    with pytest.raises(ValueError):
        support_graph(g, m, terms, 0.0)


def test_straight_path_is_kept():
    g = build_grid((5, 5))
    m = mass_on(g, [(2, j) for j in range(5)])
    terms = TerminalSet((g.node_at((2, 0)),), (g.node_at((2, 4)),))
    out = prune_and_treeify(support_graph(g, m, terms), terms)
    assert out.is_tree and out.n_pruned == 0
    assert out.tree.n_vertices == 5 and len(out.straight.edges) == 1
    assert gilbert_cost(out.tree, ONE, 0.5) == 4.0


def test_spur_is_pruned():
    g = build_grid((5, 5))
    m = mass_on(g, [(2, 0), (2, 1), (2, 2), (2, 3), (1, 2), (0, 2)])
    terms = TerminalSet((g.node_at((2, 0)),), (g.node_at((2, 3)),))
    out = prune_and_treeify(support_graph(g, m, terms), terms)
    assert out.is_tree and out.n_pruned == 2
    assert out.tree.n_vertices == 4


def test_cycle_is_reported_not_broken():
    g = build_grid((4, 4))
    m = mass_on(g, [(1, 1), (1, 2), (2, 1), (2, 2), (0, 1), (3, 2)])
    terms = TerminalSet((g.node_at((0, 1)),), (g.node_at((3, 2)),))
    out = prune_and_treeify(support_graph(g, m, terms), terms)
    assert not out.is_tree and out.n_cycles == 1 and "cycle" in out.reason
    assert out.tree is None and out.branch_vertices() == []


def test_disconnected_terminals_reported():
    g = build_grid((5, 5))
    m = mass_on(g, [(0, 0), (4, 4)])
    terms = TerminalSet((g.node_at((0, 0)),), (g.node_at((4, 4)),))
    out = prune_and_treeify(support_graph(g, m, terms), terms)
    assert not out.is_tree and out.n_components == 2
    assert len(set(out.terminal_components.values())) == 2


def test_pruning_keeps_terminals_connected():
    g = build_grid((8, 8))
    rng = np.random.default_rng(2)
    for _ in range(20):
        m = rng.dirichlet(np.ones(64) * 0.3)
        terms = TerminalSet((0, 7), (63,))
        sg = support_graph(g, m, terms, 0.02)
        out = prune_and_treeify(sg, terms)
        kept = set(out.graph.nodes.tolist())
        assert {0, 7, 63} <= kept
        if out.n_components == 1:
            assert out.graph.cycle_count == out.n_cycles
            assert out.is_tree == (out.graph.n_edges == out.graph.n_nodes - 1)


def test_t_shape_extraction(t_shape):
    g, m, terms = t_shape
    report, out = extract(g, m, terms, HALF, 0.5, 0.05)
    assert report.is_tree and report.n_cycles == 0
    assert report.branch_vertices == [([3.0, 3.0], 3)]
    assert report.orbit_lengths == {(0, 0): 8.0, (1, 0): 8.0}
    # grid path: legs of length 5, 5 with flow 1/2 and 3 with flow 1
    assert report.gilbert_cost == pytest.approx(2 * 5 * math.sqrt(0.5) + 3, abs=1e-12)
    straight = 2 * math.sqrt(0.5) * math.hypot(3, 2) + 3
    assert report.gilbert_cost_straight == pytest.approx(straight, abs=1e-12)
    assert report.total_length == 13.0
    assert out.straight.n_vertices == 4


def test_evaluate_with_oracle_gap():
    tree = tree_from_points([(0, 0), (2, 0)], [(0, 1)], (0,), (1,))
    report = evaluate_extraction(tree, ONE, 0.5, oracle_value=1.6)
    assert report.gilbert_cost == 2.0 and report.oracle_gap == pytest.approx(0.25)


def test_zero_distance_pair_contributes_nothing():
    tree = tree_from_points([(0, 0), (1, 0)], [(0, 1)], (0, 1), (1,))
    report = evaluate_extraction(tree, MailingPlan(((0, 0, 0.5), (1, 0, 0.5))), 0.5)
    assert report.orbit_lengths[(1, 0)] == 0.0
    assert report.gilbert_cost == pytest.approx(math.sqrt(0.5))


def test_report_serialises():
    tree = tree_from_points([(0, 0), (2, 0)], [(0, 1)], (0,), (1,))
    d = evaluate_extraction(tree, ONE, 0.5).to_dict()
    assert d["orbit_lengths"] == {"0,0": 2.0}
