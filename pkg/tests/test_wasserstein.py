import math
import warnings

import numpy as np
import pytest

from gilbert_convex.grid import MailingPlan, TerminalSet, build_grid, pair_table, single_pair
from gilbert_convex.wasserstein import (PExponent, Potential, WeightedPath, conjugate,
                                        discrete_wp, dphi, inner_max, inner_max_all,
                                        parallel_wpp, path_wpp, power_terms, primal_gradient,
                                        primal_objective)


def uniform(n):
    return np.full(n, 1.0 / n)


def test_exponent():
    e = PExponent(3.0)
    assert 1 / e.p + 1 / e.conjugate == pytest.approx(1.0, abs=1e-14)
    assert PExponent.from_sigma(0.5).p == 2.0
    assert PExponent(8.0).sigma == 0.125
    for bad in (1.0, 0.5, math.inf):
        with pytest.raises(ValueError):
            PExponent(bad)
    for bad in (0.0, 1.0, 1.5):
        with pytest.raises(ValueError):
            PExponent.from_sigma(bad)


def test_path_wpp():
    assert path_wpp(WeightedPath(((1.0, 1.0),)), 3.7) == 1.0
    assert path_wpp(WeightedPath(((2.0, 0.5),)), 2.0) == 4.0
    assert math.isinf(path_wpp(WeightedPath(((1.0, 1.0), (1.0, 0.0))), 2.0))
    with pytest.raises(ValueError):
        WeightedPath(())
    with pytest.raises(ValueError):
        WeightedPath(((0.0, 1.0),))


def test_parallel_wpp():
    assert parallel_wpp([4.0], 2.0) == 4.0
    assert parallel_wpp([2.0, 2.0], 2.0) == pytest.approx(1.0, abs=1e-12)
    for p in (2.0, 3.0, 8.0):
        for k in (2, 3, 5):
            assert parallel_wpp([1.7] * k, p) == pytest.approx(1.7 * k ** (1 - p), rel=1e-12)
    with pytest.raises(ValueError):
        parallel_wpp([], 2.0)
    with pytest.raises(ValueError):
        parallel_wpp([1.0, 0.0], 2.0)


def test_parallel_matches_single_path():
    path = WeightedPath(((1.0, 0.3), (2.0, 0.7)))
    assert parallel_wpp([path_wpp(path, 3.0)], 3.0) == path_wpp(path, 3.0)


def test_dphi_examples():
    g = build_grid((3,))
    assert np.allclose(dphi(g, np.array([0.0, 1.0, 3.0]), 2.0), [1.0, 2.5, 4.0])
    assert np.allclose(dphi(g, np.full(3, 7.0), 1.5), 0.0)
    g2 = build_grid((4, 4))
    phi = np.random.default_rng(0).standard_normal(16)
    assert np.array_equal(dphi(g2, phi, 1.4), dphi(g2, phi, 1.4)) and np.allclose(
        dphi(g2, phi + 3.25, 1.4), dphi(g2, phi, 1.4), atol=1e-13)


def test_dphi_stack_matches_rows():
    g = build_grid((3, 4))
    phi = np.random.default_rng(1).standard_normal((3, 12))
    stacked = dphi(g, phi, 1.3)
    for a in range(3):
        assert np.allclose(stacked[a], dphi(g, phi[a], 1.3))


def test_power_terms_derivatives():
    t = np.linspace(-2, 2, 9)
    h = 1e-6
    for q, delta in ((2.0, 0.0), (1.5, 0.0), (1.2, 0.1), (4 / 3, 0.01)):
        num1 = (power_terms(t + h, q, delta) - power_terms(t - h, q, delta)) / (2 * h)
        num2 = (power_terms(t + h, q, delta, 1) - power_terms(t - h, q, delta, 1)) / (2 * h)
        ok = np.abs(t) > 1e-3 if delta == 0 else np.ones_like(t, bool)
        assert np.allclose(num1[ok], power_terms(t, q, delta, 1)[ok], rtol=1e-6, atol=1e-8)
        assert np.allclose(num2[ok], power_terms(t, q, delta, 2)[ok], rtol=1e-5, atol=1e-6)
    assert power_terms(np.array([0.0]), 1.5, 0.1)[0] == 0.0


def test_discrete_wp_examples():
    g = build_grid((3,))
    m = uniform(3)
    assert discrete_wp(g, m, np.zeros(3), (0, 2), 2.0) == 0.0
    assert discrete_wp(g, m, np.array([4.0, 2.0, 0.0]), (0, 2), 2.0) == pytest.approx(4.0)
    assert discrete_wp(g, m, np.full(3, 5.0), (0, 2), 3.0) == 0.0


def test_discrete_wp_gauge_and_linearity():
    g = build_grid((4, 4))
    rng = np.random.default_rng(2)
    phi = rng.standard_normal(16)
    m1, m2 = rng.dirichlet(np.ones(16), 2)
    v = discrete_wp(g, m1, phi, (0, 15), 3.0)
    assert discrete_wp(g, m1, phi + 2.5, (0, 15), 3.0) == pytest.approx(v, abs=1e-12)
    lam = 0.3
    mix = discrete_wp(g, lam * m1 + (1 - lam) * m2, phi, (0, 15), 3.0)
    assert mix == pytest.approx(lam * v + (1 - lam) * discrete_wp(g, m2, phi, (0, 15), 3.0),
                                abs=1e-12)


def test_inner_max_three_nodes():
    pot, value = inner_max(build_grid((3,)), uniform(3), (0, 2), 2.0)
    assert value == pytest.approx(4.0, abs=1e-12)
    assert np.allclose(pot.values, [4.0, 2.0, 0.0], atol=1e-12)
    assert pot.gauge_node == 2 and pot.values[2] == 0.0 and pot.converged


@pytest.mark.parametrize("n", [9, 17, 33, 65])
def test_inner_max_path_closed_form(n):
    _, value = inner_max(build_grid((n,)), uniform(n), (0, n - 1), 2.0)
    assert value == pytest.approx(n * n - 5 * n / 3, abs=1e-8)


def test_inner_max_disconnected():
    g = build_grid((5,))
    m = np.array([0.25, 0.25, 0.0, 0.25, 0.25])
    # one empty node keeps half of each adjacent edge coefficient: finite
    assert math.isfinite(inner_max(g, m, (0, 4), 2.0)[1])
    m = np.array([0.5, 0.0, 0.0, 0.0, 0.5])
    pot, value = inner_max(g, m, (0, 4), 2.0)
    assert math.isinf(value) and pot.status == "disconnected"
    assert math.isinf(primal_objective(g, m, single_pair(0, 4), 2.0))


def test_inner_max_same_node():
    pot, value = inner_max(build_grid((3, 3)), uniform(9), (4, 4), 3.0)
    assert value == 0.0 and np.all(pot.values == 0)


@pytest.mark.parametrize("p", [1.5, 3.0, 4.0, 8.0])
def test_inner_max_general_p_is_stationary(p):
    g = build_grid((6, 6))
    m = np.random.default_rng(4).dirichlet(np.ones(36))
    pot, value = inner_max(g, m, (0, 35), p, tol=1e-10)
    assert pot.converged
    q = conjugate(p)
    # perturbing the optimum never increases the value
    rng = np.random.default_rng(5)
    for _ in range(5):
        d = rng.standard_normal(36) * 1e-3 * np.abs(pot.values).max()
        d[35] = 0.0
        assert discrete_wp(g, m, pot.values + d, (0, 35), p, pot.delta) <= value + 1e-9 * abs(value)
    # first-order condition: unit flow k psi'(dphi) (p/p') out of x
    k = g.edge_weights(m)
    flux = (p / q) * (g.incidence.T @ (k * power_terms(g.incidence @ pot.values, q, pot.delta, 1)))
    assert flux[0] == pytest.approx(p, rel=1e-8)


@pytest.mark.parametrize("p", [2.0, 3.0])
def test_inner_max_symmetric(p):
    g = build_grid((5, 4))
    m = np.random.default_rng(6).dirichlet(np.ones(20))
    a = inner_max(g, m, (2, 17), p, delta=1e-4, tol=1e-10)[1]
    b = inner_max(g, m, (17, 2), p, delta=1e-4, tol=1e-10)[1]
    assert a == pytest.approx(b, rel=1e-8)


def test_inner_max_p2_matches_smoothed_limit():
    g = build_grid((5, 5))
    m = np.random.default_rng(7).dirichlet(np.ones(25))
    exact = inner_max(g, m, (0, 24), 2.0)[1]
    near = inner_max(g, m, (0, 24), 2.0 + 1e-6, delta=1e-9, tol=1e-10)[1]
    assert near == pytest.approx(exact, rel=1e-4)


def test_primal_objective_examples():
    g = build_grid((3,))
    assert primal_objective(g, uniform(3), single_pair(0, 2), 2.0) == pytest.approx(4.0)
    g = build_grid((4, 4))
    m = np.random.default_rng(8).dirichlet(np.ones(16))
    same = pair_table(TerminalSet((0, 5), (15, 10)), MailingPlan(((0, 0, 0.5), (1, 0, 0.5))))
    assert primal_objective(g, m, same, 2.0) == pytest.approx(
        0.5 * primal_objective(g, m, single_pair(0, 15), 2.0)
        + 0.5 * primal_objective(g, m, single_pair(5, 15), 2.0), rel=1e-12)


def test_identical_pairs_equal_single_pair():
    g = build_grid((3, 3))
    m = np.random.default_rng(9).dirichlet(np.ones(9))
    doubled = pair_table(TerminalSet((0, 4), (8,)), MailingPlan(((0, 0, 0.5), (1, 0, 0.5))))
    doubled = doubled.__class__(doubled.keys, np.array([0, 0]), np.array([8, 8]), doubled.mass)
    assert primal_objective(g, m, doubled, 2.0) == pytest.approx(
        primal_objective(g, m, single_pair(0, 8), 2.0), rel=1e-12)


def test_inner_max_all_threads_match_serial():
    g = build_grid((6, 6))
    m = np.random.default_rng(10).dirichlet(np.ones(36))
    pairs = pair_table(TerminalSet((0, 5, 30), (35,)),
                       MailingPlan(((0, 0, 0.2), (1, 0, 0.3), (2, 0, 0.5))))
    serial = inner_max_all(g, m, pairs, 3.0)
    threaded = inner_max_all(g, m, pairs, 3.0, workers=3)
    for (pa, va), (pb, vb) in zip(serial, threaded):
        assert va == vb and np.array_equal(pa.values, pb.values)


def test_primal_gradient_matches_finite_differences():
    g = build_grid((4, 4))
    rng = np.random.default_rng(11)
    m = rng.dirichlet(np.ones(16) * 3)
    pairs = pair_table(TerminalSet((0, 3), (15,)), MailingPlan(((0, 0, 0.4), (1, 0, 0.6))))
    for p in (2.0, 3.0):
        _, grad = primal_gradient(g, m, pairs, p, delta=1e-3, tol=1e-10)
        d = rng.standard_normal(16)
        d -= d.mean()
        h = 1e-6
        up = primal_objective(g, m + h * d, pairs, p, 1e-3, 1e-10)
        down = primal_objective(g, m - h * d, pairs, p, 1e-3, 1e-10)
        assert (up - down) / (2 * h) == pytest.approx(grad @ d, rel=1e-5)


def test_potential_fields():
    pot = Potential(np.zeros(3), (0, 2), 2)
    assert pot.converged and pot.delta == 0.0


def two_corridor(length=20, heavy=3.0):
    """Two corridors of unequal mass joined only at x and y; middle row empty."""
    g = build_grid((length + 1, 3))
    m = np.zeros(g.n_nodes)
    for i in range(length + 1):
        m[g.node_at((i, 0))] = 1.0
        m[g.node_at((i, 2))] = heavy
    m /= m.sum()
    x, y = g.node_at((0, 1)), g.node_at((length, 1))
    k = g.edge_weights(m)
    index = {tuple(e): n for n, e in enumerate(g.edges.tolist())}
    integrals = []
    for row in (0, 2):
        nodes = [x] + [g.node_at((i, row)) for i in range(length + 1)] + [y]
        ks = [k[index[tuple(sorted((a, b)))]] for a, b in zip(nodes, nodes[1:])]
        integrals.append(WeightedPath(tuple((1.0, kk) for kk in ks)))
    return g, m, x, y, integrals


@pytest.mark.parametrize("p,rel", [(2.0, 1e-12), (4.0, 0.05), (8.0, 0.05)])
def test_two_corridor_grid_matches_parallel_formula(p, rel):
    g, m, x, y, paths = two_corridor()
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        value = inner_max(g, m, (x, y), p)[1]
    formula = parallel_wpp([path_wpp(w, p) for w in paths], p)
    assert value == pytest.approx(formula, rel=rel)
