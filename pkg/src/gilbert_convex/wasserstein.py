"""Conditional Wasserstein cost ``W_p^p(x, y || m)``.

Closed forms along weighted paths and parallel orbits, and the discrete
penalised dual on a grid,

    W(m, phi; x, y) = -(p/p') sum_z m(z) Dphi(z) + p (phi(x) - phi(y)),
    Dphi(z) = sum_{z' in N(z)} |phi(z) - phi(z')|**p' / |N(z)|,

maximised over potentials ``phi``.  Summing ``m(z) Dphi(z)`` over nodes is the
same as summing ``k_e psi(phi(z) - phi(z'))`` over undirected edges with
``k_e = m(z)/|N(z)| + m(z')/|N(z')|``; all the numerics below use the edge
form.  For ``p != 2`` the power ``|t|**p'`` may be replaced by the smoothed
``(t**2 + delta**2)**(p'/2) - delta**p'``.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import connected_components

from .grid import GridSpec, PairTable, SimplexWeights


K_FLOOR = 1e-250


class ConvergenceWarning(UserWarning):
    pass


@dataclass(frozen=True)
class PExponent:
    p: float

    def __post_init__(self):
        if not (self.p > 1 and math.isfinite(self.p)):
            raise ValueError(f"p must be a finite number > 1, got {self.p}")
        object.__setattr__(self, "p", float(self.p))

    @classmethod
    def from_sigma(cls, sigma: float) -> "PExponent":
        if not 0 < sigma < 1:
            raise ValueError(f"sigma must lie in (0, 1), got {sigma}")
        return cls(1.0 / sigma)

    @property
    def conjugate(self) -> float:
        return self.p / (self.p - 1.0)

    @property
    def sigma(self) -> float:
        return 1.0 / self.p


def conjugate(p: float) -> float:
    return PExponent(p).conjugate


@dataclass(frozen=True)
class WeightedPath:
    """Segments ``(length, density)`` of one orbit."""

    segments: tuple[tuple[float, float], ...]

    def __post_init__(self):
        segs = tuple((float(a), float(b)) for a, b in self.segments)
        if not segs:
            raise ValueError("a path needs at least one segment")
        if any(length <= 0 or s < 0 for length, s in segs):
            raise ValueError("segment lengths must be positive and densities nonnegative")
        object.__setattr__(self, "segments", segs)


@dataclass(frozen=True)
class Potential:
    """Potential for one plan pair, gauged to vanish at the sink node."""

    values: np.ndarray = field(repr=False)
    pair: tuple[int, int]
    gauge_node: int
    status: str = "ok"  # "ok", "disconnected" or "maxiter"
    iterations: int = 0
    delta: float = 0.0

    @property
    def converged(self) -> bool:
        return self.status == "ok"


# -- closed forms -------------------------------------------------------------

def path_wpp(path: WeightedPath, p: float) -> float:
    """``sum |e| s(e)**(1-p)``; infinite if a segment is starved."""
    PExponent(p)
    total = 0.0
    for length, s in path.segments:
        if s == 0:
            return math.inf
        total += length * s ** (1.0 - p)
    return total


def parallel_wpp(orbit_integrals: Sequence[float], p: float) -> float:
    """Compose the values of parallel orbits: ``(sum I_i**(1/(1-p)))**(1-p)``."""
    PExponent(p)
    ints = np.asarray(orbit_integrals, dtype=float)
    if ints.size == 0:
        raise ValueError("need at least one orbit")
    if np.any(ints <= 0):
        raise ValueError("orbit integrals must be positive")
    if ints.size == 1:
        return float(ints[0])
    e = 1.0 / (1.0 - p)
    return float(np.sum(ints ** e) ** (1.0 - p))


# -- smoothed power -----------------------------------------------------------

def power_terms(t: np.ndarray, q: float, delta: float = 0.0, order: int = 0) -> np.ndarray:
    """``psi(t) = |t|**q`` (``delta == 0``) or its smoothed form, or derivative ``order``."""
    if delta == 0.0:
        if q == 2.0:
            return (t * t, 2.0 * t, np.full_like(t, 2.0))[order]
        a = np.abs(t)
        if order == 0:
            return a ** q
        if order == 1:
            return q * np.sign(t) * a ** (q - 1.0)
        with np.errstate(divide="ignore"):
            return q * (q - 1.0) * a ** (q - 2.0)
    s = t * t + delta * delta
    if order == 0:
        return s ** (q / 2.0) - delta ** q
    if order == 1:
        return q * t * s ** (q / 2.0 - 1.0)
    return q * s ** (q / 2.0 - 1.0) + q * (q - 2.0) * t * t * s ** (q / 2.0 - 2.0)


def _smoothing(p: float, delta: float | None) -> float:
    return 0.0 if p == 2.0 or delta is None else float(delta)


# -- discrete functional ------------------------------------------------------

def dphi(grid: GridSpec, phi, p_prime: float, delta: float = 0.0) -> np.ndarray:
    """Neighbour-averaged power of differences, one value per node.

    ``phi`` may be a single potential (N,) or a stack (P, N).
    """
    values = phi.values if isinstance(phi, Potential) else np.asarray(phi, dtype=float)
    diffs = values @ grid.incidence.T if values.ndim == 2 else grid.incidence @ values
    terms = power_terms(diffs, p_prime, delta)
    summed = (grid.node_edge @ terms.T).T if terms.ndim == 2 else grid.node_edge @ terms
    return summed / grid.degree


def discrete_wp(grid: GridSpec, m, phi, pair: tuple[int, int], p: float,
                delta: float = 0.0) -> float:
    """Value of the penalised functional at a fixed potential."""
    q = conjugate(p)
    values = phi.values if isinstance(phi, Potential) else np.asarray(phi, dtype=float)
    mv = np.asarray(m, dtype=float)
    x, y = pair
    energy = float(mv @ dphi(grid, values, q, _smoothing(p, delta)))
    return -(p / q) * energy + p * (values[x] - values[y])


def reference_scale(grid: GridSpec, m, x: int, y: int, p: float) -> float:
    """Typical edge difference of the maximiser, estimated from the p=2 unit flow.

    The optimality condition makes ``k_e |dphi_e|**(p'-1)`` a unit flow, so
    ``|dphi_e| ~ (|J_e| / k_e)**(p-1)`` with ``J`` the linear (p=2) flow.
    """
    k = grid.edge_weights(m)
    phi2, _ = _solve_quadratic(grid, k, x, y)
    flow = np.abs(k * (grid.incidence @ phi2))
    used = k > 0
    return float(np.max((flow[used] / k[used]) ** (p - 1.0)))


def _laplacian(grid: GridSpec, weights: np.ndarray) -> sp.csc_matrix:
    inc = grid.incidence
    return (inc.T @ sp.diags(weights) @ inc).tocsc()


def _active_nodes(grid: GridSpec, k: np.ndarray, anchor: int) -> np.ndarray | None:
    """Nodes joined to ``anchor`` by positive-coefficient edges.

    Coefficients below ``K_FLOOR`` times the largest one count as zero: they
    only arise from underflow and make the Laplacian numerically singular.
    """
    live = k > K_FLOOR * k.max()
    e = grid.edges[live]
    adj = sp.coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(grid.n_nodes,) * 2)
    _, labels = connected_components(adj, directed=False)
    return np.flatnonzero(labels == labels[anchor])


def _solve_quadratic(grid, k, x, y):
    """p = 2: solve ``L phi = e_x - e_y`` with phi(y) = 0 on the component of y."""
    phi = np.zeros(grid.n_nodes)
    if x == y:
        return phi, 0.0
    comp = _active_nodes(grid, k, y)
    if x not in set(comp.tolist()):
        return None, math.inf
    free = comp[comp != y]
    lap = _laplacian(grid, k)[free][:, free]
    rhs = (free == x).astype(float)
    phi[free] = spla.spsolve(lap.tocsc(), rhs)
    return phi, float(phi[x] - phi[y])


def inner_max(grid: GridSpec, m, pair: tuple[int, int], p: float,
              delta: float | None = None, tol: float = 1e-9,
              max_iter: int = 500, phi0=None) -> tuple[Potential, float]:
    """Maximise ``discrete_wp`` over potentials with ``phi(y) = 0``.

    For ``p == 2`` this is one sparse symmetric solve.  Otherwise damped
    Newton on the smoothed functional, started from a rescaled p = 2 solution,
    until the gradient sup-norm drops below ``tol``.  ``delta=None`` picks
    ``1e-3`` times the reference difference scale.

    Returns ``(potential, value)``; the value is ``inf`` when x and y are not
    joined by edges with positive coefficient.
    """
    q = conjugate(p)
    mv = np.asarray(m, dtype=float)
    x, y = int(pair[0]), int(pair[1])
    k = grid.edge_weights(mv)
    phi2, val2 = _solve_quadratic(grid, k, x, y)
    if phi2 is None:
        return Potential(np.zeros(grid.n_nodes), (x, y), y, "disconnected"), math.inf
    if p == 2.0 or x == y:
        return Potential(phi2, (x, y), y), val2

    if delta is None:
        flow = np.abs(k * (grid.incidence @ phi2))
        used = k > 0
        delta = 1e-3 * float(np.max((flow[used] / k[used]) ** (p - 1.0)))
    comp = _active_nodes(grid, k, y)
    free = comp[comp != y]
    inc = grid.incidence[:, free]
    b = np.zeros(len(free))
    b[free == x] = 1.0

    def objective(u):
        return p * (u @ b) - (p / q) * float(k @ power_terms(inc @ u, q, delta))

    if phi0 is not None:
        u = np.asarray(phi0.values if isinstance(phi0, Potential) else phi0, float)[free]
    else:
        # scale the linear solution to the best multiple of itself
        u = phi2[free]
        energy = float(k @ power_terms(inc @ u, q, 0.0))
        u = u * ((u @ b) / energy) ** (1.0 / (q - 1.0))
    f = objective(u)
    status = "maxiter"
    it = 0
    for it in range(1, max_iter + 1):
        d = inc @ u
        g = p * b - (p / q) * (inc.T @ (k * power_terms(d, q, delta, 1)))
        if np.max(np.abs(g)) < tol:
            status = "ok"
            break
        h = (p / q) * (inc.T @ sp.diags(k * power_terms(d, q, delta, 2)) @ inc).tocsc()
        h = h + 1e-14 * h.diagonal().max() * sp.identity(h.shape[0], format="csc")
        step = spla.spsolve(h, g)
        slope = float(g @ step)
        if not slope > 0:
            step, slope = g, float(g @ g)
        t = 1.0
        while True:
            trial = u + t * step
            ft = objective(trial)
            if ft >= f + 1e-4 * t * slope:
                break
            t *= 0.5
            if t < 1e-16:
                break
        if t < 1e-16 or ft - f <= 1e-15 * max(1.0, abs(f)):
            # no further progress possible at working precision
            if t >= 1e-16:
                u, f = trial, ft
            status = "ok" if np.max(np.abs(g)) < 1e3 * tol else "maxiter"
            break
        u, f = trial, ft
    phi = np.zeros(grid.n_nodes)
    phi[free] = u
    if status != "ok":
        warnings.warn(f"inner_max for pair {(x, y)} stopped after {it} iterations "
                      f"without reaching tol={tol}", ConvergenceWarning, stacklevel=2)
    return (Potential(phi, (x, y), y, status, it, delta),
            discrete_wp(grid, mv, phi, (x, y), p, delta))


def inner_max_all(grid: GridSpec, m, pairs: PairTable, p: float, delta: float | None = None,
                  tol: float = 1e-9, workers: int = 1) -> list[tuple[Potential, float]]:
    """``inner_max`` for every pair; results are returned in plan order."""
    jobs = [(int(x), int(y)) for x, y in zip(pairs.sources, pairs.sinks)]

    def run(pair):
        return inner_max(grid, m, pair, p, delta, tol)

    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(run, jobs))
    return [run(pair) for pair in jobs]


def primal_objective(grid: GridSpec, m, pairs: PairTable, p: float,
                     delta: float | None = None, tol: float = 1e-9,
                     workers: int = 1) -> float:
    """``H_p(m) = sum_ij pi(i,j) * max_phi W(m, phi; x_i, y_j)``."""
    if isinstance(m, SimplexWeights):
        m = m.values
    total = 0.0
    for w, (_, value) in zip(pairs.mass, inner_max_all(grid, m, pairs, p, delta, tol, workers)):
        if math.isinf(value):
            return math.inf
        total += w * value
    return total


def primal_gradient(grid: GridSpec, m, pairs: PairTable, p: float,
                    delta: float | None = None, tol: float = 1e-9) -> tuple[float, np.ndarray]:
    """Value of ``H_p`` and its gradient in ``m``: ``-(p/p') sum pi Dphi*``."""
    q = conjugate(p)
    results = inner_max_all(grid, m, pairs, p, delta, tol)
    value = 0.0
    energy = np.zeros(grid.n_nodes)
    for w, (pot, val) in zip(pairs.mass, results):
        value += w * val
        energy += w * dphi(grid, pot.values, q, pot.delta)
    return value, -(p / q) * energy
