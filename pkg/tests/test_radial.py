import math

import numpy as np
import pytest

from src.errors import DomainError
from src.models.domain import Ball, Ellipsoid, Shell
from src.models.radial import (
    exterior_sphere_barrier, interior_sphere_barrier, nested_ball_check, overlap, radial_residual,
    solve_radial_ladder, solve_radial_maximal, sphere_barrier_profile,
)


@pytest.mark.parametrize('n, r0, dist, expected', [
    (3, 1.0, 0.0, 1.0),
    (3, 1.0, 0.5, 1.154700),
    (4, 2.0, 0.0, 0.5),
])
def test_interior_sphere_barrier(n, r0, dist, expected):
    assert interior_sphere_barrier(n, r0, dist) == pytest.approx(expected, abs=1e-6)


@pytest.mark.parametrize('n, r0, dist, expected', [
    (3, 1.0, math.sqrt(2.0), 1.0),
    (5, 1.0, 2.0, 0.19245),
])
def test_exterior_sphere_barrier(n, r0, dist, expected):
    assert exterior_sphere_barrier(n, r0, dist) == pytest.approx(expected, abs=1e-5)


def test_barriers_blow_up_at_the_sphere():
    assert exterior_sphere_barrier(3, 1.0, 1.0 + 1e-8) > 1e3
    assert interior_sphere_barrier(3, 1.0, 1.0 - 1e-8) > 1e3


def test_barrier_preconditions():
    with pytest.raises(DomainError):
        interior_sphere_barrier(3, 1.0, 1.0)
    with pytest.raises(DomainError):
        exterior_sphere_barrier(3, 1.0, 0.5)


@pytest.fixture(scope='module')
def ball_profile():
    return solve_radial_maximal(3, Ball(1.0), 512)


def test_maximal_ball_profile_matches_closed_form(ball_profile):
    exact = sphere_barrier_profile(3, 1.0, ball_profile.r).u
    assert np.max(np.abs(ball_profile.u - exact)) <= 1e-6
    assert ball_profile.r[0] == 0.0
    assert ball_profile.h_trunc == pytest.approx(4.0 / 511)


def test_maximal_ball_profile_has_w_equal_minus_curvature(ball_profile):
    assert np.allclose(ball_profile.w, -1.0, atol=1e-6)
    assert radial_residual(ball_profile) <= 1e-8


def test_finite_boundary_value_stays_below_the_maximal_solution():
    profile = solve_radial_maximal(3, Ball(1.0), 512, m=10.0)
    assert profile.u[-1] == pytest.approx(10.0, rel=1e-12)
    inside = profile.r < 1.0
    exact = sphere_barrier_profile(3, 1.0, profile.r[inside]).u
    assert np.all(profile.u[inside] <= exact + 1e-10)


def test_ladder_increases_pointwise():
    profiles = solve_radial_ladder(3, Ball(1.0), 256, ladder=(2, 4, 8, 16))
    assert [p.m for p in profiles] == [2, 4, 8, 16, math.inf]
    for lower, upper in zip(profiles, profiles[1:]):
        _, a, b = overlap(lower, upper)
        assert np.all(a <= b + 1e-10)


def test_ladder_at_512_points_reaches_the_rounding_floor():
    profiles = solve_radial_ladder(3, Ball(1.0), 512, ladder=(2, 4, 8, 16))
    assert [p.m for p in profiles] == [2, 4, 8, 16, math.inf]
    assert all(radial_residual(p) <= 1e-8 for p in profiles)
    for lower, upper in zip(profiles, profiles[1:]):
        _, a, b = overlap(lower, upper)
        assert np.all(a <= b + 1e-10)


def test_ladder_must_be_increasing():
    with pytest.raises(DomainError):
        solve_radial_ladder(3, Ball(1.0), 64, ladder=(4, 2))


def test_nested_balls():
    report = nested_ball_check(3, (0.8, 1.0), 256)
    assert report['violations'] == 0
    assert report['worst_margin'] > 0


def test_shell_profile():
    shell = Shell(0.5, 1.0)
    profile = solve_radial_maximal(3, shell, 1024)
    d = profile.distance()
    assert profile.kind == 'shell-maximal'
    assert np.all(d > 0)
    assert np.all(profile.u > 0)
    assert radial_residual(profile) <= 1e-8
    # Both truncation layers carry the two-term data
    v = profile.v
    assert v[0] == pytest.approx(2 * d[0] + 2 * d[0] ** 2, rel=1e-10)
    assert v[-1] == pytest.approx(2 * d[-1] - d[-1] ** 2, rel=1e-10)


def test_profile_evaluation_range(ball_profile):
    assert ball_profile.evaluate(0.0) == pytest.approx(1.0, abs=1e-8)
    with pytest.raises(DomainError):
        ball_profile.evaluate(1.0)


def test_radial_solver_rejects_other_geometries():
    with pytest.raises(DomainError):
        solve_radial_maximal(3, Ellipsoid([1.0, 1.0, 0.5]), 64)
    with pytest.raises(DomainError):
        solve_radial_maximal(3, Ball(1.0), 8)
