"""Shared fixtures: solved radial rings and cached Bernoulli solutions."""

import functools
import time

import numpy as np
import pytest

from bfbs.free_boundary import BernoulliProblem, solve_bernoulli
from bfbs.geometry import disk, make_body
from bfbs.operator import p_laplace
from bfbs.oracle import RadialCase, radial_potential
from bfbs.pde_solver import build_grid, solve_potential

ROUNDED_SQUARE = ("rounded_polygon", ((-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)), 0.2)

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def radial_exact(grid, p, a, R):
    case = RadialCase(p, 2, a, R)
    r = np.clip(np.linalg.norm(grid.X - grid.K.center, axis=-1), a, R)
    return np.vectorize(lambda x: radial_potential(case, x))(r)


@functools.lru_cache(maxsize=None)
def radial_field(p, N=128, M=256, a=1.0, R=2.0):
    grid = build_grid(disk(a, M), disk(R, M), N)
    return solve_potential(p_laplace(p), grid)


@functools.lru_cache(maxsize=None)
def bernoulli(shape, p, mode="normal", start_factor=None, c=1.0, M=256, N=128):
    """(Omega, field, report, seconds) for K = make_body(shape), cached per session."""
    K = make_body(shape, M)
    pb = BernoulliProblem(K, p_laplace(p), c, N=N)
    start = None if start_factor is None else disk(start_factor * K.circumradius(), M, K.center)
    t0 = time.perf_counter()
    Om, f, rep = solve_bernoulli(pb, mode, 200, start=start)
    return Om, f, rep, time.perf_counter() - t0


@pytest.fixture(scope="session")
def ring_p2():
    return radial_field(2.0)


@pytest.fixture(scope="session")
def ring_p3():
    return radial_field(3.0)
