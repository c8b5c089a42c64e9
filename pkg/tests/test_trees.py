import math

import numpy as np
import pytest

from gilbert_convex.grid import MailingPlan
from gilbert_convex.trees import (CostBudget, EmbeddedTree, TreeError, compute_edge_flows,
                                  find_orbit, gilbert_cost, kirchhoff_residual,
                                  min_transport_cost, optimal_budget, transport_cost,
                                  tree_from_points)

HALF = MailingPlan(((0, 0, 0.5), (1, 0, 0.5)))


@pytest.fixture
def star():
    # sources (0,0), (0,2); branch (1,1); sink (3,1)
    return tree_from_points([(0, 0), (0, 2), (1, 1), (3, 1)], [(0, 2), (1, 2), (2, 3)], (0, 1), (3,))


def single_edge(length=2.0):
    return tree_from_points([(0.0, 0.0), (length, 0.0)], [(0, 1)], (0,), (1,))


ONE = MailingPlan(((0, 0, 1.0),))


def test_tree_validation():
    with pytest.raises(TreeError):
        tree_from_points([(0, 0), (1, 0), (2, 0)], [(0, 1)], (0,), (2,))
    with pytest.raises(TreeError):
        tree_from_points([(0, 0), (1, 0), (2, 0), (3, 0)], [(0, 1), (1, 0), (2, 3)], (0,), (3,))
    with pytest.raises(TreeError):
        tree_from_points([(0, 0), (0, 0)], [(0, 1)], (0,), (1,))
    with pytest.raises(TreeError):
        tree_from_points([(0, 0), (1, 0)], [(0, 1)], (0,), (5,))


def test_orbits(star):
    assert find_orbit(single_edge(), 0, 1) == [0]
    assert find_orbit(star, 0, 3) == [0, 2]
    assert find_orbit(star, 3, 1) == [2, 1]
    assert find_orbit(star, 2, 2) == []


def test_edge_flows(star):
    assert np.allclose(compute_edge_flows(single_edge(), ONE).flow, [1.0])
    assert np.allclose(compute_edge_flows(star, HALF).flow, [0.5, 0.5, 1.0])
    only = MailingPlan(((0, 0, 1.0),))
    assert np.allclose(compute_edge_flows(star, only).flow, [1.0, 0.0, 1.0])


def test_flows_reject_missing_terminal(star):
    with pytest.raises(TreeError):
        compute_edge_flows(star, MailingPlan(((0, 1, 1.0),)))


def test_kirchhoff(star):
    assert np.max(np.abs(kirchhoff_residual(star, HALF))) < 1e-12


def test_gilbert_cost(star):
    assert gilbert_cost(single_edge(2.0), ONE, 0.5) == 2.0
    assert gilbert_cost(star, HALF, 0.5) == pytest.approx(4.0, abs=1e-12)
    assert gilbert_cost(star, HALF, 0.0) == pytest.approx(2 * math.sqrt(2) + 2, abs=1e-12)
    with pytest.raises(ValueError):
        gilbert_cost(star, HALF, 1.0)
    with pytest.raises(ValueError):
        gilbert_cost(star, HALF, -0.1)


def test_zero_flow_edges_ignored(star):
    only = MailingPlan(((0, 0, 1.0),))
    assert gilbert_cost(star, only, 0.0) == pytest.approx(math.sqrt(2) + 2, abs=1e-12)


def test_transport_cost(star):
    e = single_edge(1.0)
    assert transport_cost(e, CostBudget(np.array([1.0]), 1.0), ONE) == 1.0
    assert math.isinf(transport_cost(star, CostBudget(np.array([0.0, 0.2, 0.25]), 1.0), HALF))
    with pytest.raises(ValueError):
        transport_cost(e, CostBudget(np.array([1.5]), 1.0), ONE)


def test_optimal_budget(star):
    b = optimal_budget(single_edge(2.0), ONE, 1.0)
    assert b.s[0] == 0.5 and b.spent(single_edge(2.0)) == 1.0
    b = optimal_budget(star, HALF, 1.0)
    assert np.allclose(b.s, [0.17678, 0.17678, 0.25], atol=5e-6)
    assert b.s[0] == pytest.approx(math.sqrt(0.5) / 4, abs=1e-15)
    assert b.spent(star) == pytest.approx(1.0, abs=1e-12)
    assert b.s[0] == b.s[1]


def test_min_transport_cost(star):
    assert min_transport_cost(single_edge(2.0), ONE, 1.0) == pytest.approx(4.0, abs=1e-12)
    assert min_transport_cost(star, HALF, 1.0) == pytest.approx(16.0, abs=1e-10)
    s = optimal_budget(star, HALF, 1.0)
    assert transport_cost(star, s, HALF) == pytest.approx(16.0, rel=1e-12)


def test_all_zero_flow_rejected():
    t = tree_from_points([(0, 0), (1, 0)], [(0, 1)], (0,), (0,))
    with pytest.raises(ValueError):
        optimal_budget(t, ONE, 1.0)


def test_subadditivity():
    rng = np.random.default_rng(3)
    for _ in range(100):
        w1, w2 = rng.uniform(0.01, 1, 2)
        sigma = rng.uniform(0.01, 0.99)
        assert w1 ** sigma + w2 ** sigma >= (w1 + w2) ** sigma


def test_round_trip(star):
    again = EmbeddedTree.from_dict(star.to_dict())
    assert np.array_equal(again.vertices, star.vertices)
    assert np.array_equal(again.edges, star.edges)
    assert again.sources == star.sources and again.sinks == star.sinks
