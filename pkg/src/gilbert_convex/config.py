"""Run configuration and result files (JSON, one versioned schema each)."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .entropic import CONVENTIONS, AnnealSchedule, PotentialSet, SolveDiagnostics
from .extraction import DEFAULT_TAU
from .grid import GridSpec, MailingPlan, TerminalSet, pair_table
from .trees import EmbeddedTree
from .wasserstein import PExponent, primal_objective

CONFIG_SCHEMA = "gilbert-convex/config/v1"
RESULT_SCHEMA = "gilbert-convex/result/v1"


class ConfigError(ValueError):
    """Invalid configuration; ``field`` is a dotted path into the document."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field
        self.message = message


@dataclass(frozen=True)
class RunConfig:
    grid: GridSpec
    source_points: tuple[tuple[float, ...], ...]
    sink_points: tuple[tuple[float, ...], ...]
    terminals: TerminalSet
    snap_distances: tuple[float, ...]
    plan: MailingPlan
    exponent: PExponent
    exponent_given: str  # "sigma" or "p"
    schedule: AnnealSchedule = AnnealSchedule()
    smoothing: float = 1e-3
    tau: float = DEFAULT_TAU
    seed: int | None = None
    init_noise: float = 0.1
    convention: str = "consistent"
    output: str = "out"
    oracle: dict = field(default_factory=dict)

    @property
    def p(self) -> float:
        return self.exponent.p

    @property
    def sigma(self) -> float:
        return self.exponent.sigma

    @property
    def pairs(self):
        return pair_table(self.terminals, self.plan)

    def to_dict(self) -> dict:
        s = self.schedule
        out = {
            "schema": CONFIG_SCHEMA,
            "grid": {"dims": list(self.grid.dims), "spacing": self.grid.spacing,
                     "origin": list(self.grid.origin)},
            "terminals": {"sources": [list(x) for x in self.source_points],
                          "sinks": [list(x) for x in self.sink_points]},
            "snapped": {"sources": list(self.terminals.sources),
                        "sinks": list(self.terminals.sinks),
                        "distances": list(self.snap_distances)},
            "plan": [list(e) for e in self.plan.entries],
            self.exponent_given: self.sigma if self.exponent_given == "sigma" else self.p,
            "schedule": {"eps_start": s.eps_start, "factor": s.factor, "eps_floor": s.eps_floor,
                         "gtol": s.gtol, "max_iter": s.max_iter, "relative": s.relative},
            "smoothing": self.smoothing,
            "tau": self.tau,
            "seed": self.seed,
            "init_noise": self.init_noise,
            "convention": self.convention,
            "output": self.output,
            "oracle": dict(self.oracle),
        }
        return out


def _get(doc: dict, key: str, path: str, kind, default=None, required=False):
    if key not in doc or doc[key] is None:
        if required:
            raise ConfigError(f"{path}{key}", "is required")
        return default
    value = doc[key]
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if not isinstance(value, kind) or (kind in (int, float) and isinstance(value, bool)):
        raise ConfigError(f"{path}{key}", f"expected {getattr(kind, '__name__', kind)}, "
                                          f"got {type(value).__name__}")
    return value


def _points(doc, path, ndim) -> tuple[tuple[float, ...], ...]:
    if not isinstance(doc, list) or not doc:
        raise ConfigError(path, "expected a non-empty list of points")
    pts = []
    for k, pt in enumerate(doc):
        if (not isinstance(pt, list) or len(pt) != ndim
                or not all(isinstance(c, (int, float)) and not isinstance(c, bool) for c in pt)):
            raise ConfigError(f"{path}[{k}]", f"expected {ndim} coordinates")
        pts.append(tuple(float(c) for c in pt))
    return tuple(pts)


def parse_config(doc: dict) -> RunConfig:
    """Validate a configuration document and fill in defaults."""
    if not isinstance(doc, dict):
        raise ConfigError("$", "configuration must be a JSON object")
    schema = doc.get("schema", CONFIG_SCHEMA)
    if schema != CONFIG_SCHEMA:
        raise ConfigError("schema", f"unsupported schema {schema!r}")
    known = {"schema", "grid", "terminals", "plan", "sigma", "p", "schedule", "smoothing",
             "tau", "seed", "init_noise", "convention", "output", "oracle", "snapped"}
    for key in doc:
        if key not in known:
            raise ConfigError(key, "unknown field")

    g = _get(doc, "grid", "", dict, required=True)
    dims = _get(g, "dims", "grid.", list, required=True)
    if not all(isinstance(n, int) and not isinstance(n, bool) for n in dims):
        raise ConfigError("grid.dims", "expected a list of integers")
    try:
        grid = GridSpec(tuple(dims), _get(g, "spacing", "grid.", float, 1.0),
                        tuple(_get(g, "origin", "grid.", list, [])))
    except (ValueError, TypeError) as exc:
        raise ConfigError("grid", str(exc)) from None

    t = _get(doc, "terminals", "", dict, required=True)
    src = _points(t.get("sources"), "terminals.sources", grid.ndim)
    snk = _points(t.get("sinks"), "terminals.sinks", grid.ndim)
    snapped = [grid.snap(x) for x in src + snk]
    try:
        terminals = TerminalSet(tuple(s for s, _ in snapped[:len(src)]),
                                tuple(s for s, _ in snapped[len(src):]))
    except ValueError as exc:
        raise ConfigError("terminals", f"{exc} after snapping to the grid") from None

    entries = _get(doc, "plan", "", list, required=True)
    for k, e in enumerate(entries):
        if not (isinstance(e, list) and len(e) == 3):
            raise ConfigError(f"plan[{k}]", "expected [source index, sink index, mass]")
    try:
        plan = MailingPlan(tuple(tuple(e) for e in entries))
        plan.check_terminals(terminals)
    except (ValueError, TypeError) as exc:
        raise ConfigError("plan", str(exc)) from None

    has_sigma, has_p = doc.get("sigma") is not None, doc.get("p") is not None
    if has_sigma == has_p:
        raise ConfigError("sigma", "give exactly one of sigma and p")
    try:
        if has_sigma:
            exponent = PExponent.from_sigma(_get(doc, "sigma", "", float))
        else:
            exponent = PExponent(_get(doc, "p", "", float))
    except ValueError as exc:
        raise ConfigError("sigma" if has_sigma else "p", str(exc)) from None

    s = _get(doc, "schedule", "", dict, {})
    for key in s:
        if key not in {"eps_start", "factor", "eps_floor", "gtol", "max_iter", "relative"}:
            raise ConfigError(f"schedule.{key}", "unknown field")
    try:
        schedule = AnnealSchedule(
            eps_start=_get(s, "eps_start", "schedule.", float, 1.0),
            factor=_get(s, "factor", "schedule.", float, 0.5),
            eps_floor=_get(s, "eps_floor", "schedule.", float, 1e-3),
            gtol=_get(s, "gtol", "schedule.", float, None),
            max_iter=_get(s, "max_iter", "schedule.", int, 2000),
            relative=_get(s, "relative", "schedule.", bool, True),
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError("schedule", str(exc)) from None

    smoothing = _get(doc, "smoothing", "", float, 1e-3)
    if not smoothing > 0:
        raise ConfigError("smoothing", "must be positive")
    tau = _get(doc, "tau", "", float, DEFAULT_TAU)
    if not 0 < tau <= 1:
        raise ConfigError("tau", "must lie in (0, 1]")
    init_noise = _get(doc, "init_noise", "", float, 0.1)
    if init_noise < 0:
        raise ConfigError("init_noise", "must be nonnegative")
    convention = _get(doc, "convention", "", str, "consistent")
    if convention not in CONVENTIONS:
        raise ConfigError("convention", f"must be one of {CONVENTIONS}")
    return RunConfig(
        grid=grid, source_points=src, sink_points=snk, terminals=terminals,
        snap_distances=tuple(d for _, d in snapped), plan=plan, exponent=exponent,
        exponent_given="sigma" if has_sigma else "p", schedule=schedule,
        smoothing=smoothing, tau=tau, seed=_get(doc, "seed", "", int, None),
        init_noise=init_noise, convention=convention,
        output=_get(doc, "output", "", str, "out"), oracle=_get(doc, "oracle", "", dict, {}),
    )


def load_config(path) -> RunConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError("$", f"not valid JSON: {exc}") from None
    return parse_config(doc)


# -- results ------------------------------------------------------------------

@dataclass
class RunResult:
    config: RunConfig
    m: np.ndarray
    potentials: PotentialSet
    diagnostics: SolveDiagnostics
    primal: float
    primal_delta: float | None
    extraction: dict
    tree: EmbeddedTree | None = None
    straight_tree: EmbeddedTree | None = None
    oracle: dict | None = None

    def to_dict(self) -> dict:
        return {
            "schema": RESULT_SCHEMA,
            "config": self.config.to_dict(),
            "primal": self.primal,
            "primal_delta": self.primal_delta,
            "converged": self.diagnostics.converged,
            "m": self.m.tolist(),
            "potentials": {"keys": [list(k) for k in self.potentials.keys],
                           "sinks": list(self.potentials.sinks),
                           "values": self.potentials.values.tolist()},
            "diagnostics": self.diagnostics.to_dict(),
            "extraction": self.extraction,
            "tree": self.tree.to_dict() if self.tree is not None else None,
            "straight_tree": (self.straight_tree.to_dict()
                              if self.straight_tree is not None else None),
            "oracle": self.oracle,
        }

    def dumps(self) -> str:
        return json.dumps(_finite(self.to_dict()), indent=1, sort_keys=True, allow_nan=False)

    def evaluate_primal(self) -> float:
        cfg = self.config
        return primal_objective(cfg.grid, self.m, cfg.pairs, cfg.p, self.primal_delta, 1e-12)

    @classmethod
    def from_dict(cls, data: dict) -> "RunResult":
        if data.get("schema") != RESULT_SCHEMA:
            raise ConfigError("schema", f"unsupported result schema {data.get('schema')!r}")
        pot = data["potentials"]
        return cls(
            config=parse_config({k: v for k, v in data["config"].items() if k != "snapped"}),
            m=np.asarray(data["m"], dtype=float),
            potentials=PotentialSet(tuple(map(tuple, pot["keys"])), tuple(pot["sinks"]),
                                    np.asarray(pot["values"], dtype=float)),
            diagnostics=SolveDiagnostics.from_dict(_restore(data["diagnostics"])),
            primal=_restore(data["primal"]),
            primal_delta=data["primal_delta"],
            extraction=_restore(data["extraction"]),
            tree=EmbeddedTree.from_dict(data["tree"]) if data.get("tree") else None,
            straight_tree=(EmbeddedTree.from_dict(data["straight_tree"])
                           if data.get("straight_tree") else None),
            oracle=data.get("oracle"),
        )


def load_result(path) -> RunResult:
    try:
        return RunResult.from_dict(json.loads(Path(path).read_text()))
    except (json.JSONDecodeError, KeyError) as exc:
        raise ConfigError("$", f"not a result file: {exc}") from None


def _finite(obj):
    """Replace non-finite floats by strings so the output stays strict JSON."""
    if isinstance(obj, float) and not math.isfinite(obj):
        return "nan" if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    if isinstance(obj, dict):
        return {str(k): _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    if isinstance(obj, np.generic):
        return _finite(obj.item())
    return obj


def _restore(obj):
    if isinstance(obj, str) and obj in ("nan", "inf", "-inf"):
        return float(obj)
    if isinstance(obj, dict):
        return {k: _restore(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_restore(v) for v in obj]
    return obj
