import math

import pytest

from gkzflop.secondary_geometry import cmath_rect
from gkzflop.triangulation import regular_triangulation, validate_configuration

A1_POINTS = [(1, 0), (1, 1), (1, 2)]
A2_POINTS = [(1, 0), (1, 1), (1, 2), (1, 3)]
CONIFOLD_POINTS = [(1, 0, 0), (1, 1, 0), (1, 0, 1), (1, 1, 1)]
SIMPLEX_POINTS = [(1, 0, 0), (1, 1, 0), (1, 0, 1)]

A2_HEIGHTS = {"fine": (0, -1, -1, 0), "left": (0, -1, 1, 0), "right": (0, 1, -1, 0), "coarse": (0, 1, 1, 0)}


def point(w, args):
    """``z_j = exp(-w_j) e^{i arg_j}``."""
    return [cmath_rect(math.exp(-x), a) for x, a in zip(w, args)]


@pytest.fixture(scope="session")
def a1():
    cfg = validate_configuration(A1_POINTS)
    return {"config": cfg, "fine": regular_triangulation(cfg, (0, -1, 0), "fine"),
            "coarse": regular_triangulation(cfg, (0, 1, 0), "coarse")}


@pytest.fixture(scope="session")
def a2():
    cfg = validate_configuration(A2_POINTS)
    out = {"config": cfg}
    for k, w in A2_HEIGHTS.items():
        out[k] = regular_triangulation(cfg, w, k)
    return out


@pytest.fixture(scope="session")
def conifold():
    cfg = validate_configuration(CONIFOLD_POINTS)
    return {"config": cfg, "plus": regular_triangulation(cfg, (1, 0, 0, 1), "plus"),
            "minus": regular_triangulation(cfg, (0, 1, 1, 0), "minus")}


@pytest.fixture(scope="session")
def simplex():
    cfg = validate_configuration(SIMPLEX_POINTS)
    return {"config": cfg, "simplex": regular_triangulation(cfg, (0, 0, 0), "simplex")}


@pytest.fixture(scope="session")
def all_triangulations(a1, a2, conifold, simplex):
    out = [a1["fine"], a1["coarse"], conifold["plus"], conifold["minus"], simplex["simplex"]]
    out += [a2[k] for k in A2_HEIGHTS]
    return out


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
