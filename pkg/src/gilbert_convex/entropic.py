"""Entropic regularisation of the grid problem and its concave dual.

For potentials ``Phi = {phi_ij}`` let ``c(z) = sum_ij pi(i,j) Dphi_ij(z)``.
Minimising the entropic primal

    sum_ij pi(i,j) W(m, phi_ij; x_i, y_j) + (eps p/p') sum_z m(z) ln m(z)

over the simplex gives ``m = softmax(c / eps)`` and the dual

    H_eps(Phi) = -(eps p/p') ln sum_z exp(c(z)/eps) + p sum_ij pi(i,j) (phi_ij(x_i) - phi_ij(y_j)),

which is concave in ``Phi``.  ``solve`` maximises it for a decreasing
sequence of ``eps`` with warm starts.

The ``"printed"`` convention swaps in ``softmax(c / 2 eps)`` and an
``eps``-weighted log-sum-exp; it does not satisfy the saddle identity and is
only meant for side-by-side runs.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.special import logsumexp

from .grid import GridSpec, PairTable, SimplexWeights, uniform_weights
from .wasserstein import (
    ConvergenceWarning,
    Potential,
    _solve_quadratic,
    conjugate,
    discrete_wp,
    dphi,
    power_terms,
    primal_objective,
)

log = logging.getLogger(__name__)

CONVENTIONS = ("consistent", "printed")
ARMIJO_C = 1e-4
ARMIJO_SHRINK = 0.5
# softmax weights that underflow are held at the smallest normal double
TINY = np.finfo(float).tiny


@dataclass(frozen=True)
class PotentialSet:
    keys: tuple[tuple[int, int], ...]
    sinks: tuple[int, ...]
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape[0] != len(self.keys) or len(self.sinks) != len(self.keys):
            raise ValueError("one potential per plan pair is required")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "keys", tuple(tuple(k) for k in self.keys))
        object.__setattr__(self, "sinks", tuple(int(s) for s in self.sinks))

    @classmethod
    def for_pairs(cls, pairs: PairTable, values) -> "PotentialSet":
        v = np.array(values, dtype=float)
        v -= v[np.arange(len(pairs)), pairs.sinks][:, None]
        return cls(pairs.keys, tuple(pairs.sinks.tolist()), v)

    def __len__(self):
        return len(self.keys)

    def potential(self, a: int) -> Potential:
        return Potential(self.values[a], self.keys[a], self.sinks[a])


@dataclass(frozen=True)
class AnnealSchedule:
    """Sequence ``eps_start * factor**k`` clipped at ``eps_floor``.

    With ``relative=True`` each level multiplies the current energy
    ``sum_z m(z) c(z)`` (the value scale of the problem) instead of being
    used as an absolute ``eps``.
    """

    eps_start: float = 1.0
    factor: float = 0.5
    eps_floor: float = 1e-3
    gtol: float | None = None
    max_iter: int = 2000
    relative: bool = True

    def __post_init__(self):
        if not (self.eps_start > 0 and self.eps_floor > 0):
            raise ValueError("eps_start and eps_floor must be positive")
        if self.eps_start < self.eps_floor:
            raise ValueError("eps_start must not be below eps_floor")
        if not 0 < self.factor < 1:
            raise ValueError("factor must lie in (0, 1)")
        if self.max_iter < 1:
            raise ValueError("max_iter must be positive")
        if self.gtol is not None and not self.gtol > 0:
            raise ValueError("gtol must be positive")

    def levels(self) -> list[float]:
        out = [self.eps_start]
        while out[-1] > self.eps_floor * (1 + 1e-12):
            out.append(max(out[-1] * self.factor, self.eps_floor))
        return out

    def tolerance(self, p: float) -> float:
        return self.gtol if self.gtol is not None else 1e-6 * p


@dataclass
class StageRecord:
    level: float
    eps: float
    delta: float
    dual: float
    dual_offset: float
    grad_norm: float
    primal: float
    entropic_primal: float
    gap: float
    iterations: int
    converged: bool
    monotone: bool
    newton_steps: int = 0
    fallback_steps: int = 0


@dataclass
class SolveDiagnostics:
    stages: list[StageRecord] = field(default_factory=list)
    p: float = 2.0
    convention: str = "consistent"

    @property
    def converged(self) -> bool:
        return bool(self.stages) and self.stages[-1].converged

    @property
    def unconverged_stages(self) -> list[int]:
        return [k for k, s in enumerate(self.stages) if not s.converged]

    @property
    def max_gap(self) -> float:
        return max((s.gap for s in self.stages), default=0.0)

    def to_dict(self) -> dict:
        return {"p": self.p, "convention": self.convention, "converged": self.converged,
                "stages": [asdict(s) for s in self.stages]}

    @classmethod
    def from_dict(cls, data: dict) -> "SolveDiagnostics":
        return cls([StageRecord(**s) for s in data["stages"]], data["p"], data["convention"])


# -- pointwise pieces ---------------------------------------------------------

def _values(potentials) -> np.ndarray:
    v = potentials.values if isinstance(potentials, PotentialSet) else potentials
    return np.atleast_2d(np.asarray(v, dtype=float))


def _temperature(p: float, eps: float, convention: str) -> tuple[float, float]:
    """(kappa, tau) with H = -kappa * LSE(c / tau) + linear part."""
    if convention == "consistent":
        return eps * p / conjugate(p), eps
    if convention == "printed":
        return eps, 2.0 * eps
    raise ValueError(f"unknown convention {convention!r}; choose from {CONVENTIONS}")


def aggregate_energy(grid: GridSpec, pairs: PairTable, potentials, p_prime: float,
                     delta: float = 0.0) -> np.ndarray:
    """``c(z) = sum_ij pi(i,j) Dphi_ij(z)``."""
    return pairs.mass @ dphi(grid, _values(potentials), p_prime, delta)


def entropic_weights(c, eps: float, convention: str = "consistent") -> SimplexWeights:
    if not eps > 0:
        raise ValueError("eps must be positive")
    tau = _temperature(2.0, eps, convention)[1]
    z = np.asarray(c, dtype=float) / tau
    w = np.exp(z - logsumexp(z))
    return SimplexWeights.normalized(np.maximum(w, TINY))


def dual_objective(grid: GridSpec, pairs: PairTable, potentials, p: float, eps: float,
                   delta: float = 0.0, convention: str = "consistent") -> float:
    return _Dual(grid, pairs, p, eps, delta, convention).value(_values(potentials))[0]


def dual_gradient(grid: GridSpec, pairs: PairTable, potentials, p: float, eps: float,
                  delta: float = 0.0, convention: str = "consistent") -> np.ndarray:
    dual = _Dual(grid, pairs, p, eps, delta, convention)
    phi = _values(potentials)
    _, c = dual.value(phi)
    return dual.gradient(phi, c)[0]


def entropic_primal(grid: GridSpec, pairs: PairTable, m, potentials, p: float, eps: float,
                    delta: float = 0.0) -> float:
    """``sum pi W(m, phi_ij) + (eps p/p') sum m ln m`` at fixed (m, Phi)."""
    mv = np.asarray(m, dtype=float)
    phi = _values(potentials)
    total = sum(w * discrete_wp(grid, mv, phi[a], (x, y), p, delta)
                for a, (w, x, y) in enumerate(zip(pairs.mass, pairs.sources, pairs.sinks)))
    pos = mv > 0
    return float(total + eps * p / conjugate(p) * np.sum(mv[pos] * np.log(mv[pos])))


# -- the dual as an object with derivatives -----------------------------------

class _Dual:
    def __init__(self, grid, pairs, p, eps, delta, convention):
        if not eps > 0:
            raise ValueError("eps must be positive")
        self.grid = grid
        self.pairs = pairs
        self.p = float(p)
        self.q = conjugate(p)
        self.delta = 0.0 if self.p == 2.0 else float(delta)
        self.kappa, self.tau = _temperature(self.p, eps, convention)
        self.rhs = pairs.rhs(grid.n_nodes)
        self.inc = grid.incidence
        self.inc_t = grid.incidence.T.tocsr()

    def value(self, phi):
        c = self.pairs.mass @ dphi(self.grid, phi, self.q, self.delta)
        lin = self.p * float(np.sum(self.pairs.mass * np.sum(self.rhs * phi, axis=1)))
        return -self.kappa * logsumexp(c / self.tau) + lin, c

    def weights(self, c):
        z = c / self.tau
        w = np.maximum(np.exp(z - logsumexp(z)), TINY)
        return w / w.sum()

    def gradient(self, phi, c):
        m = self.weights(c)
        k = self.grid.edge_weights(m)
        diffs = phi @ self.inc.T
        flux = k * power_terms(diffs, self.q, self.delta, 1)
        g = (-(self.kappa / self.tau) * (self.pairs.mass[:, None] * (flux @ self.inc))
             + self.p * self.pairs.mass[:, None] * self.rhs)
        return g, m, k, diffs

    def newton_direction(self, phi, c):
        """Solve ``-Hess d = grad`` on the gauge-free coordinates.

        The negated Hessian is ``(kappa/tau) [S0 + G^T diag(m) G / tau] - u u^T``
        with ``S0`` block-diagonal weighted Laplacians, ``G`` the Jacobian of
        ``c`` and ``u = sqrt(kappa) G^T m / tau``; the rank-one part is
        handled by Sherman-Morrison.
        """
        g, m, k, diffs = self.gradient(phi, c)
        grid, pairs = self.grid, self.pairs
        n, npair = grid.n_nodes, len(pairs)
        scale = self.kappa / self.tau
        lap_blocks, jac_blocks = [], []
        node_avg = sp.diags(1.0 / grid.degree) @ grid.node_edge
        for a in range(npair):
            w = pairs.mass[a]
            h2 = power_terms(diffs[a], self.q, self.delta, 2)
            lap_blocks.append(w * (self.inc_t @ sp.diags(k * h2) @ self.inc))
            h1 = power_terms(diffs[a], self.q, self.delta, 1)
            jac_blocks.append(w * (node_avg @ sp.diags(h1) @ self.inc))
        jac = sp.hstack(jac_blocks).tocsr()
        s = scale * (sp.block_diag(lap_blocks) + (jac.T @ sp.diags(m) @ jac) / self.tau)
        u = math.sqrt(self.kappa) / self.tau * (jac.T @ m)
        keep = np.ones(npair * n, dtype=bool)
        keep[np.arange(npair) * n + pairs.sinks] = False
        s = s.tocsr()[keep][:, keep].tocsc()
        diag = s.diagonal()
        s = s + sp.diags(1e-10 * diag + 1e-14 * diag.max())
        gk, uk = g.ravel()[keep], u[keep]
        lu = spla.splu(s.tocsc())
        x1, x2 = lu.solve(gk), lu.solve(uk)
        denom = 1.0 - uk @ x2
        if not denom > 0:
            raise np.linalg.LinAlgError("rank-one update lost definiteness")
        d = np.zeros(npair * n)
        d[keep] = x1 + x2 * (uk @ x1) / denom
        return d.reshape(npair, n), g

    def laplacian_direction(self, phi, c):
        g, m, k, diffs = self.gradient(phi, c)
        n = self.grid.n_nodes
        d = np.zeros_like(g)
        for a in range(len(self.pairs)):
            h2 = power_terms(diffs[a], self.q, self.delta, 2)
            lap = (self.inc_t @ sp.diags(k * h2 + 1e-300) @ self.inc).tocsc()
            keep = np.arange(n) != self.pairs.sinks[a]
            sub = lap[keep][:, keep]
            sub = sub + sp.diags(1e-10 * sub.diagonal() + 1e-300)
            d[a, keep] = spla.spsolve(sub.tocsc(), g[a, keep])
            d[a] /= (self.kappa / self.tau) * self.pairs.mass[a]
        return d, g


def _line_search(dual, phi, value, direction, slope):
    t = 1.0
    while t > 1e-14:
        trial = phi + t * direction
        new_value, c = dual.value(trial)
        if np.isfinite(new_value) and new_value >= value + ARMIJO_C * t * slope:
            return trial, new_value, c
        t *= ARMIJO_SHRINK
    return None


def _ascend(dual, phi, tol, max_iter):
    """Damped Newton ascent with Armijo backtracking; returns final state and counters."""
    value, c = dual.value(phi)
    newton = fallback = 0
    monotone = True
    gnorm = math.inf
    for it in range(max_iter + 1):
        try:
            direction, g = dual.newton_direction(phi, c)
            kind = "newton"
        except (RuntimeError, np.linalg.LinAlgError):
            direction, g = dual.laplacian_direction(phi, c)
            kind = "laplacian"
        gnorm = float(np.max(np.abs(g)))
        if gnorm < tol or it == max_iter:
            return phi, value, c, gnorm, it, gnorm < tol, monotone, newton, fallback
        slope = float(np.sum(g * direction))
        step = _line_search(dual, phi, value, direction, slope) if slope > 0 else None
        if step is None:
            kind = "gradient"
            step = _line_search(dual, phi, value, g / max(gnorm, 1e-300), float(np.sum(g * g)) / gnorm)
        if step is None:
            log.debug("line search stalled at gradient norm %.3e", gnorm)
            return phi, value, c, gnorm, it, False, monotone, newton, fallback
        phi, new_value, c = step
        monotone &= new_value >= value
        value = new_value
        if kind == "newton":
            newton += 1
        else:
            fallback += 1
    raise AssertionError("unreachable")


def reference_flows(grid: GridSpec, pairs: PairTable, p: float) -> tuple[float, float]:
    """(value scale, potential-difference scale) at the uniform measure.

    Both come from the p = 2 unit flows ``J``: ``sum pi sum_e k^(1-p) |J|^p``
    bounds ``H_p(uniform)`` from above, and ``(|J|/k)^(p-1)`` is the matching
    potential difference.
    """
    k = grid.edge_weights(uniform_weights(grid).values)
    value, diff = 0.0, 0.0
    for w, x, y in zip(pairs.mass, pairs.sources, pairs.sinks):
        phi, _ = _solve_quadratic(grid, k, int(x), int(y))
        flow = np.abs(k * (grid.incidence @ phi))
        value += w * float(np.sum(k ** (1.0 - p) * flow ** p))
        diff = max(diff, float(np.max((flow / k) ** (p - 1.0))))
    return value, diff


def solve(grid: GridSpec, pairs: PairTable, p: float, schedule: AnnealSchedule | None = None,
          seed: int | None = None, init_noise: float = 0.1, smoothing: float = 1e-3,
          convention: str = "consistent", primal_tol: float = 1e-9, workers: int = 1,
          phi0=None) -> tuple[SimplexWeights, PotentialSet, SolveDiagnostics]:
    """Anneal ``eps`` down the schedule, maximising the dual at each level.

    Starts from ``phi0`` if given, else from ``phi = 0``; with a ``seed`` a
    Gaussian perturbation of relative size ``init_noise`` is added.  For
    ``p != 2`` the smoothing width is ``smoothing * scale * level / eps_floor``
    so that it shrinks with ``eps`` and ends at ``smoothing`` times the
    reference difference scale.
    """
    schedule = schedule or AnnealSchedule()
    tol = schedule.tolerance(p)
    value_scale, diff_scale = reference_flows(grid, pairs, p)
    n = grid.n_nodes
    phi = np.zeros((len(pairs), n)) if phi0 is None else _values(phi0).copy()
    if phi.shape != (len(pairs), n):
        raise ValueError(f"initial potentials must have shape {(len(pairs), n)}")
    if seed is not None:
        rng = np.random.default_rng(seed)
        phi += init_noise * diff_scale * rng.standard_normal((len(pairs), n))
    phi -= phi[np.arange(len(pairs)), pairs.sinks][:, None]

    diagnostics = SolveDiagnostics(p=float(p), convention=convention)
    energy = value_scale
    m = None
    for level in schedule.levels():
        eps = level * energy if schedule.relative else level
        delta = 0.0 if p == 2.0 else smoothing * diff_scale * level / schedule.eps_floor
        dual = _Dual(grid, pairs, p, eps, delta, convention)
        phi, value, c, gnorm, iters, ok, monotone, newton, fallback = _ascend(
            dual, phi, tol, schedule.max_iter)
        m = dual.weights(c)
        if convention == "consistent":
            ent = entropic_primal(grid, pairs, m, phi, p, eps, delta)
        else:
            ent = math.nan
        gap = abs(value - ent)
        primal = primal_objective(grid, m, pairs, p, delta if p != 2.0 else None, primal_tol,
                                  workers)
        offset = dual.kappa * math.log(n)
        record = StageRecord(level, eps, delta, value, value + offset, gnorm, primal, ent, gap,
                             iters, ok, monotone, newton, fallback)
        diagnostics.stages.append(record)
        log.info("eps=%.3e dual=%.10g primal=%.10g |g|=%.2e iters=%d", eps, value, primal,
                 gnorm, iters)
        if not ok:
            warnings.warn(f"dual ascent did not reach gtol={tol:g} at eps={eps:.3e} "
                          f"(|grad|={gnorm:.3e})", ConvergenceWarning, stacklevel=2)
        energy = float(m @ c)
    weights = SimplexWeights(m / m.sum())
    return weights, PotentialSet.for_pairs(pairs, phi), diagnostics
