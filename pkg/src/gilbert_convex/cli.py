"""Command line driver: ``solve``, ``eval``, ``oracle`` and ``render``.

Exit status is 0 on success, 1 on bad input and 2 when a solve finished with
a convergence warning.  Failures print one JSON error record on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import warnings
from pathlib import Path

from .config import ConfigError, RunConfig, RunResult, load_config, load_result
from .entropic import solve
from .extraction import extract
from .grid import MailingPlan
from .oracle import (branch_point_search, budget_min_direct, convexity_probe,
                     primal_min_direct)
from .render import render_svg, write_csv
from .trees import (EmbeddedTree, TreeError, compute_edge_flows, gilbert_cost,
                    min_transport_cost, optimal_budget)
from .wasserstein import ConvergenceWarning, primal_objective

WORKERS_ENV = "GILBERT_CONVEX_WORKERS"
EXIT_OK, EXIT_INPUT, EXIT_CONVERGENCE = 0, 1, 2
STAR_TERMINAL_LIMIT = 4

log = logging.getLogger("gilbert_convex")


def worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV, "")
    if not raw:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(WORKERS_ENV, f"expected an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(WORKERS_ENV, "must be at least 1")
    return n


def run_solve(config: RunConfig, workers: int = 1) -> tuple[RunResult, bool]:
    """Solve, extract and evaluate; the flag is True if any stage warned."""
    pairs = config.pairs
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", ConvergenceWarning)
        m, potentials, diagnostics = solve(
            config.grid, pairs, config.p, config.schedule, config.seed, config.init_noise,
            config.smoothing, config.convention, workers=workers)
    warned = any(issubclass(w.category, ConvergenceWarning) for w in caught)
    for w in caught:
        log.warning("%s", w.message)
    delta = None if config.p == 2.0 else diagnostics.stages[-1].delta
    primal = primal_objective(config.grid, m.values, pairs, config.p, delta, 1e-12, workers)

    oracle = None
    n_terms = len(config.terminals.sources) + len(config.terminals.sinks)
    if n_terms <= STAR_TERMINAL_LIMIT:
        oracle = branch_point_search(config.grid, config.terminals, config.plan,
                                     config.sigma).to_dict()
    report, outcome = extract(config.grid, m.values, config.terminals, config.plan,
                              config.sigma, config.tau,
                              oracle["value"] if oracle else None)
    result = RunResult(config, m.values.copy(), potentials, diagnostics, primal, delta,
                       report.to_dict(), outcome.tree, outcome.straight, oracle)
    return result, warned or not diagnostics.converged


def summary_text(result: RunResult) -> str:
    cfg, rep = result.config, result.extraction
    d = result.diagnostics
    lines = [
        f"grid            {'x'.join(map(str, cfg.grid.dims))}, spacing {cfg.grid.spacing:g}",
        f"exponent        p = {cfg.p:g} (sigma = {cfg.sigma:g})",
        f"terminals       sources {list(cfg.terminals.sources)}, sinks {list(cfg.terminals.sinks)}",
        f"snap distances  {', '.join(f'{x:.4g}' for x in cfg.snap_distances)}",
        f"stages          {len(d.stages)} (unconverged: {d.unconverged_stages or 'none'})",
        f"final eps       {d.stages[-1].eps:.6g}",
        f"dual value      {d.stages[-1].dual:.12g}",
        f"primal H_p(m)   {result.primal:.12g}",
        f"max gap         {d.max_gap:.3e}",
        f"is_tree         {str(rep['is_tree']).lower()}",
        f"components      {rep['n_components']}",
        f"cycles          {rep['n_cycles']}",
    ]
    if rep["is_tree"]:
        lines += [
            f"branch vertices {rep['branch_vertices']}",
            f"gilbert cost    {rep['gilbert_cost']:.8g} (grid path), "
            f"{rep['gilbert_cost_straight']:.8g} (straight)",
        ]
    elif rep.get("reason"):
        lines.append(f"reason          {rep['reason']}")
    if result.oracle:
        lines.append(f"star oracle     {result.oracle['value']:.8g} at "
                     f"{result.oracle['argument']['point']}")
        if rep.get("oracle_gap") is not None:
            lines.append(f"oracle gap      {rep['oracle_gap']:+.4%}")
    return "\n".join(lines) + "\n"


def write_solve(result: RunResult, out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    res = out / "result.json"
    res.write_text(result.dumps())
    summ = out / "summary.txt"
    summ.write_text(summary_text(result))
    return [res, summ]


def run_eval(tree: EmbeddedTree, plan: MailingPlan, sigma: float) -> dict:
    """G, the optimal budget and H for a tree, plus the per-edge flow table."""
    flows = compute_edge_flows(tree, plan).flow
    out = {"sigma": sigma, "G": gilbert_cost(tree, plan, sigma),
           "edges": [{"edge": [int(a), int(b)], "length": float(length), "w": float(w)}
                     for (a, b), length, w in zip(tree.edges, tree.lengths, flows)]}
    if sigma > 0:
        alpha = (1.0 - sigma) / sigma
        budget = optimal_budget(tree, plan, alpha)
        out.update(alpha=alpha, H=min_transport_cost(tree, plan, alpha),
                   budget=budget.s.tolist(), budget_spent=budget.spent(tree))
    return out


def eval_text(res: dict) -> str:
    lines = [f"G = {res['G']:.12g}"]
    if "H" in res:
        lines.append(f"H = {res['H']:.12g}  (alpha = {res['alpha']:g}, "
                     f"budget spent {res['budget_spent']:.12g})")
    lines.append(f"{'edge':>10} {'length':>12} {'w_pi':>10}" + ("  s" if "H" in res else ""))
    for k, e in enumerate(res["edges"]):
        row = f"{str(tuple(e['edge'])):>10} {e['length']:12.6g} {e['w']:10.6g}"
        if "H" in res:
            row += f"  {res['budget'][k]:.6g}"
        lines.append(row)
    return "\n".join(lines) + "\n"


def run_oracle(config: RunConfig, method: str, tree: EmbeddedTree | None = None) -> dict:
    opts = config.oracle
    if method == "primal":
        return primal_min_direct(config.grid, config.pairs, config.p,
                                 int(opts.get("steps", 5000))).to_dict()
    if method == "star":
        return branch_point_search(config.grid, config.terminals, config.plan,
                                   config.sigma).to_dict()
    if method == "budget":
        if tree is None:
            raise ConfigError("--tree", "the budget oracle needs a tree file")
        alpha = (1.0 - config.sigma) / config.sigma
        res = budget_min_direct(tree, config.plan, alpha).to_dict()
        res["closed_form"] = min_transport_cost(tree, config.plan, alpha)
        return res
    if method == "convexity":
        seed = config.seed if config.seed is not None else 0
        probe = convexity_probe(config.grid, config.pairs, config.p,
                                int(opts.get("trials", 100)), seed)
        return {"method": "convexity", "passed": probe.passed, "worst": probe.worst,
                "trials": probe.trials, "seed": probe.seed}
    raise ConfigError("--method", f"unknown oracle method {method!r}")


def run_render(result: RunResult, style: str, out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = result.config
    svg = out / f"m_{style}.svg"
    svg.write_text(render_svg(cfg.grid, result.m, cfg.terminals, style, result.tree))
    return [svg, write_csv(cfg.grid, result.m, out / "m.csv")]


def _load_tree(path) -> EmbeddedTree:
    data = json.loads(Path(path).read_text())
    if isinstance(data, dict) and data.get("schema", "").startswith("gilbert-convex/result"):
        if not data.get("tree"):
            raise ConfigError("tree", "result file holds no extracted tree")
        data = data["tree"]
    return EmbeddedTree.from_dict(data)


def _load_plan(path) -> MailingPlan:
    data = json.loads(Path(path).read_text())
    if isinstance(data, dict):
        data = data.get("plan")
        if data is None:
            raise ConfigError("plan", "is required")
    return MailingPlan(tuple(tuple(e) for e in data))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gilbert-convex", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="solve a configured instance")
    s.add_argument("--config", required=True)
    s.add_argument("--out", help="output directory (default: config 'output')")

    e = sub.add_parser("eval", help="evaluate G and H for a tree")
    e.add_argument("--tree", required=True, help="tree file or result file")
    e.add_argument("--plan", required=True, help="plan file (list or {'plan': [...]})")
    e.add_argument("--sigma", required=True, type=float)
    e.add_argument("--json", action="store_true", help="print JSON instead of a table")

    o = sub.add_parser("oracle", help="run a reference computation")
    o.add_argument("--config", required=True)
    o.add_argument("--method", required=True, choices=["primal", "star", "budget", "convexity"])
    o.add_argument("--tree", help="tree file for the budget oracle")
    o.add_argument("--out", help="output directory (default: config 'output')")

    r = sub.add_parser("render", help="draw a solved measure")
    r.add_argument("--result", required=True)
    r.add_argument("--style", choices=["heatmap", "network"], default="heatmap")
    r.add_argument("--out", help="output directory (default: next to the result)")
    return parser


def _error(kind: str, message: str, field: str | None = None) -> int:
    record = {"error": kind, "message": message}
    if field is not None:
        record["field"] = field
    print(json.dumps(record), file=sys.stderr)
    return EXIT_INPUT


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        workers = worker_count()
        if args.command == "solve":
            config = load_config(args.config)
            result, warned = run_solve(config, workers)
            paths = write_solve(result, args.out or config.output)
            sys.stdout.write(summary_text(result))
            print("wrote " + ", ".join(str(p) for p in paths))
            return EXIT_CONVERGENCE if warned else EXIT_OK
        if args.command == "eval":
            res = run_eval(_load_tree(args.tree), _load_plan(args.plan), args.sigma)
            sys.stdout.write(json.dumps(res, indent=1) + "\n" if args.json else eval_text(res))
            return EXIT_OK
        if args.command == "oracle":
            config = load_config(args.config)
            tree = _load_tree(args.tree) if args.tree else None
            res = run_oracle(config, args.method, tree)
            out = Path(args.out or config.output)
            out.mkdir(parents=True, exist_ok=True)
            path = out / f"oracle_{args.method}.json"
            path.write_text(json.dumps(res, indent=1, sort_keys=True) + "\n")
            print(json.dumps(res, sort_keys=True))
            return EXIT_OK
        if args.command == "render":
            result = load_result(args.result)
            paths = run_render(result, args.style, args.out or Path(args.result).parent)
            print("wrote " + ", ".join(str(p) for p in paths))
            return EXIT_OK
    except ConfigError as exc:
        return _error("config", exc.message, exc.field)
    except FileNotFoundError as exc:
        return _error("file", f"{exc.filename}: not found")
    except json.JSONDecodeError as exc:
        return _error("json", str(exc))
    except (TreeError, ValueError, KeyError, TypeError) as exc:
        return _error(type(exc).__name__, str(exc))
    return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
