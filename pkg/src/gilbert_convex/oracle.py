"""Brute-force reference computations.

Nothing here calls into the entropic solver: the primal is minimised
directly by entropic mirror descent on the simplex, the budget problem by
projected gradient descent, and the star family by plain enumeration.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import minimize

from .grid import GridSpec, MailingPlan, PairTable, TerminalSet
from .trees import CostBudget, EmbeddedTree, compute_edge_flows, transport_cost
from .wasserstein import primal_gradient, primal_objective

MAX_DIRECT_NODES = 64


@dataclass
class OracleResult:
    value: float
    argument: object = field(repr=False, default=None)
    count: int = 0
    method: str = ""
    converged: bool = True
    seed: int | None = None

    def to_dict(self) -> dict:
        arg = self.argument
        if isinstance(arg, np.ndarray):
            arg = arg.tolist()
        return {"method": self.method, "value": self.value, "count": self.count,
                "converged": self.converged, "seed": self.seed, "argument": arg}


def primal_min_direct(grid: GridSpec, pairs: PairTable, p: float, steps: int = 5000,
                      eta: float = 1.0, delta: float | None = None, tol: float = 1e-11,
                      ) -> OracleResult:
    """Entropic mirror descent on ``H_p`` with steps ``eta / sqrt(t)`` and iterate averaging.

    Steps are normalised by the sup-norm of the gradient.  The reported value
    is the better of the averaged iterate and the best iterate seen.
    """
    if grid.n_nodes > MAX_DIRECT_NODES:
        raise ValueError(f"direct minimisation is limited to {MAX_DIRECT_NODES} nodes")
    n = grid.n_nodes
    m = np.full(n, 1.0 / n)
    avg = np.zeros(n)
    weight = 0.0
    best_value, best_m = math.inf, m
    for t in range(1, steps + 1):
        value, grad = primal_gradient(grid, m, pairs, p, delta, tol)
        if value < best_value:
            best_value, best_m = value, m
        step = eta / math.sqrt(t)
        avg += step * m
        weight += step
        z = np.log(m) - step * grad / np.max(np.abs(grad))
        z -= z.max()
        m = np.exp(z)
        m = np.maximum(m / m.sum(), 1e-300)
        m /= m.sum()
    m_avg = avg / weight
    avg_value = primal_objective(grid, m_avg, pairs, p, delta, tol)
    if avg_value < best_value:
        best_value, best_m = avg_value, m_avg
    return OracleResult(best_value, best_m, steps, "primal")


def star_leg_flows(terminals: TerminalSet, plan: MailingPlan) -> tuple[list[int], np.ndarray]:
    """Distinct terminal nodes and the flow on the leg joining each one to a single hub.

    A node that is both a source and a sink gets one leg carrying both flows.
    """
    nodes = list(dict.fromkeys(terminals.sources + terminals.sinks))
    where = {z: k for k, z in enumerate(nodes)}
    hub = len(nodes)
    pts = np.arange(1.0, hub + 2.0)[:, None]
    pts[hub] = 0.0
    star = EmbeddedTree(pts, [(k, hub) for k in range(hub)],
                        tuple(where[z] for z in terminals.sources),
                        tuple(where[z] for z in terminals.sinks))
    return nodes, compute_edge_flows(star, plan).flow


def branch_point_search(grid: GridSpec, terminals: TerminalSet, plan: MailingPlan,
                        sigma: float) -> OracleResult:
    """Cheapest single-hub star, trying every grid node as the hub.

    Terminals sit at their grid nodes; each leg is a straight segment.
    """
    if not 0 <= sigma < 1:
        raise ValueError(f"sigma must lie in [0, 1), got {sigma}")
    nodes, flows = star_leg_flows(terminals, plan)
    used = flows > 0
    pts = grid.coords[np.asarray(nodes)[used]]
    dist = np.linalg.norm(grid.coords[:, None, :] - pts[None, :, :], axis=2)
    cost = dist @ flows[used] ** sigma
    best = int(np.argmin(cost))
    arg = {"node": best, "point": grid.coords[best].tolist(),
           "length": float(dist[best].sum()), "leg_flows": flows.tolist()}
    return OracleResult(float(cost[best]), arg, grid.n_nodes, "star")


def finite_diff_gradient(f: Callable[[np.ndarray], float], x, step: float = 1e-5) -> np.ndarray:
    x0 = np.array(x, dtype=float)
    grad = np.zeros_like(x0)
    flat = x0.reshape(-1)
    g = grad.reshape(-1)
    for k in range(flat.size):
        keep = flat[k]
        flat[k] = keep + step
        up = f(x0)
        flat[k] = keep - step
        down = f(x0)
        flat[k] = keep
        g[k] = (up - down) / (2 * step)
    return grad


@dataclass
class ProbeResult:
    passed: bool
    worst: float
    trials: int
    seed: int
    margins: np.ndarray = field(repr=False, default=None)


def convexity_probe(grid: GridSpec, pairs: PairTable, p: float, trials: int = 100,
                    seed: int = 0, lam: float = 0.5, tol: float = 1e-9,
                    delta: float | None = None) -> ProbeResult:
    """Check ``H(lam m1 + (1-lam) m2) <= lam H(m1) + (1-lam) H(m2)`` on random pairs.

    ``worst`` is the largest ``lhs - rhs`` seen; positive values are violations.
    """
    rng = np.random.default_rng(seed)
    margins = np.empty(trials)
    for k in range(trials):
        m1, m2 = rng.dirichlet(np.ones(grid.n_nodes), size=2)
        margins[k] = _margin(grid, pairs, p, m1, m2, lam, delta)
    worst = float(margins.max()) if trials else 0.0
    return ProbeResult(worst <= tol, worst, trials, seed, margins)


def _margin(grid, pairs, p, m1, m2, lam, delta=None):
    def h(m):
        return primal_objective(grid, m, pairs, p, delta, 1e-10)
    mid = lam * m1 + (1 - lam) * m2
    return h(mid) - (lam * h(m1) + (1 - lam) * h(m2))


def _simplex_projection(v: np.ndarray) -> np.ndarray:
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    rho = np.flatnonzero(u - css / np.arange(1, len(v) + 1) > 0)[-1]
    return np.maximum(v - css[rho] / (rho + 1.0), 0.0)


def budget_min_direct(tree: EmbeddedTree, plan: MailingPlan, alpha: float,
                      steps: int = 20000, rtol: float = 1e-14) -> OracleResult:
    """Minimise the transport cost over ``sum |e| s(e) = 1`` by projected gradient.

    Works in ``u(e) = |e| s(e)``, which lives on the standard simplex; uses
    Barzilai-Borwein steps with Armijo backtracking.
    """
    flow = compute_edge_flows(tree, plan).flow
    used = flow > 0
    if not np.any(used):
        raise ValueError("all edge flows are zero")
    lengths = tree.lengths[used]
    coef = flow[used] * lengths ** (1.0 + alpha)

    def cost(u):
        return float(np.sum(coef * u ** -alpha)) if np.all(u > 0) else math.inf

    def grad(u):
        return -alpha * coef * u ** (-alpha - 1.0)

    u = np.full(len(coef), 1.0 / len(coef))
    f, g = cost(u), grad(u)
    step = 1.0 / np.max(np.abs(g))
    converged = False
    it = 0
    for it in range(1, steps + 1):
        while True:
            trial = _simplex_projection(u - step * g)
            ft = cost(trial)
            if ft <= f + 1e-4 * g @ (trial - u):
                break
            step *= 0.5
            if step < 1e-300:
                break
        if not ft < math.inf or step < 1e-300:
            break
        gt = grad(trial)
        s, y = trial - u, gt - g
        decrease = f - ft
        u, f, g = trial, ft, gt
        if decrease <= rtol * abs(f):
            converged = True
            break
        sy = s @ y
        step = (s @ s) / sy if sy > 0 else step * 2.0
    s_full = np.zeros(len(tree.edges))
    s_full[used] = u / lengths
    value = transport_cost(tree, CostBudget(s_full, float(alpha)), plan)
    return OracleResult(value, s_full, it, "budget", converged)


def entropy_simplex_min(c, eps: float) -> OracleResult:
    """Minimise ``-sum m c + eps sum m ln m`` over the simplex with a generic solver."""
    cv = np.asarray(c, dtype=float)
    n = len(cv)
    shift = cv - cv.max()

    def f(m):
        mm = np.maximum(m, 1e-300)
        return float(-mm @ shift + eps * mm @ np.log(mm))

    def df(m):
        return -shift + eps * (np.log(np.maximum(m, 1e-300)) + 1.0)

    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", "Values in x were outside bounds")
        res = minimize(f, np.full(n, 1.0 / n), jac=df, method="SLSQP",
                       bounds=[(1e-300, 1.0)] * n,
                       constraints=[{"type": "eq", "fun": lambda m: m.sum() - 1.0,
                                     "jac": lambda m: np.ones(n)}],
                       options={"ftol": 1e-16, "maxiter": 1000})
    return OracleResult(float(res.fun), res.x, int(res.nit), "simplex", bool(res.success))

