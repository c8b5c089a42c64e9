import math
import time

import numpy as np
import pytest

from gilbert_convex.grid import MailingPlan, TerminalSet, build_grid, pair_table
from gilbert_convex.entropic import solve

SQRT3 = math.sqrt(3.0)


def y_instance():
    grid = build_grid((33, 33), 1.0 / 32)
    sources = tuple(grid.snap(x)[0] for x in [(0.25, 0.2), (0.25, 0.8)])
    sinks = (grid.snap((0.85, 0.5))[0],)
    terminals = TerminalSet(sources, sinks)
    plan = MailingPlan(((0, 0, 0.5), (1, 0, 0.5)))
    return grid, terminals, plan


TRIANGLE = [(0.0, 0.0), (1.0, 0.0), (0.5, SQRT3 / 2)]


def triangle_instance():
    grid = build_grid((33, 33), 1.2 / 32, (-0.1, -0.3113))
    nodes = tuple(grid.snap(x)[0] for x in TRIANGLE)
    terminals = TerminalSet(nodes, (nodes[1], nodes[2], nodes[0]))
    plan = MailingPlan(((0, 0, 1 / 3), (1, 1, 1 / 3), (2, 2, 1 / 3)))
    return grid, terminals, plan


class Timed:
    def __init__(self, value, seconds):
        self.value = value
        self.seconds = seconds


def _timed_solve(grid, terminals, plan, p, **kw):
    t0 = time.perf_counter()
    out = solve(grid, pair_table(terminals, plan), p, **kw)
    return Timed(out, time.perf_counter() - t0)


@pytest.fixture(scope="session")
def y_solve():
    grid, terminals, plan = y_instance()
    return _timed_solve(grid, terminals, plan, 2.0)


@pytest.fixture(scope="session")
def y_solves_seeded():
    grid, terminals, plan = y_instance()
    return [_timed_solve(grid, terminals, plan, 2.0, seed=s) for s in (1, 2)]


@pytest.fixture(scope="session")
def triangle_solve():
    grid, terminals, plan = triangle_instance()
    return _timed_solve(grid, terminals, plan, 8.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


CRITERIA: dict[int, str] = {}


def record_criterion(n: int, passed: bool, detail: str) -> bool:
    line = f"CRITERION {n}: {'PASS' if passed else 'FAIL'}  {detail}"
    CRITERIA[n] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[n])
