import os
import sys
# Same trick as src/main.py
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import numpy as np
import pytest

from src.models.domain import Ball
from src.models.grid import ScalarField, SolverConfig, build_masked_grid, solve_truncated


def exact_ball_u(points, radius=1.0, n=3):
    r2 = np.sum(points ** 2, axis=1)
    return (radius - r2 / radius) ** (1.0 - n / 2.0)


@pytest.fixture(autouse=True)
def no_database_override(monkeypatch):
    monkeypatch.delenv('HYPRAD_DATABASE', raising=False)


@pytest.fixture(scope='module')
def unit_ball():
    return Ball(1.0, n=3)


@pytest.fixture(scope='module')
def ball_grid(unit_ball):
    """Unit ball, resolution 33, h_trunc = 2 h_grid"""
    return build_masked_grid(unit_ball, 33, 0.125)


@pytest.fixture(scope='module')
def exact_ball_field(ball_grid):
    return ScalarField(grid=ball_grid, values=exact_ball_u(ball_grid.points), tag='u')


@pytest.fixture(scope='module')
def ball_solution(unit_ball, ball_grid):
    return solve_truncated(unit_ball, ball_grid, SolverConfig(h_trunc=0.125))
