import numpy as np
import pytest

from conftest import exact_ball_u
from src.errors import ConfigError, DomainError
from src.models.comparison import sandwich_bounds
from src.models.domain import Ball, DistanceData, Ellipsoid, Shell
from src.models.grid import (
    DEEP, ScalarField, SolverConfig, asymptotic_dirichlet_data, build_masked_grid, gradient_vectors,
    hyperbolic_critical_points, hyperbolic_radius, observed_order, renormalized_w, solve_truncated,
    v_equation_residual, v_jacobian, v_residual,
)
from src.models.radial import solve_radial_maximal


def lattice_points(resolution):
    axis = np.linspace(-1.0, 1.0, resolution)
    mesh = np.meshgrid(axis, axis, axis, indexing='ij')
    return np.stack([m.ravel() for m in mesh], axis=1)


def test_deep_nodes_match_direct_enumeration():
    grid = build_masked_grid(Ball(1.0), 33, 0.1)
    X = lattice_points(33)
    expected = int(np.sum(1.0 - np.linalg.norm(X, axis=1) > 0.1))
    assert grid.counts()['deep'] == expected
    assert np.all(grid.status.ravel()[grid.active[grid.deep]] == DEEP)


def test_large_truncation_keeps_deep_nodes_inside_the_half_ball():
    grid = build_masked_grid(Ball(1.0), 33, 0.5)
    assert np.all(np.linalg.norm(grid.points[grid.deep], axis=1) < 0.5)


def test_shell_deep_nodes_avoid_both_layers():
    grid = build_masked_grid(Shell(0.5, 1.0), 65, 0.05)
    r = np.linalg.norm(grid.points[grid.deep], axis=1)
    assert np.all(r > 0.55)
    assert np.all(r < 0.95)


def test_deep_nodes_have_full_stencils(ball_grid):
    assert np.all(ball_grid.neighbors[ball_grid.deep_index] >= 0)
    assert ball_grid.h_grid == pytest.approx(0.0625)


@pytest.mark.parametrize('resolution, h_trunc, message', [
    (9, 0.5, 'resolution'),
    (33, 1.5, 'h_trunc must lie'),
    (33, 0.05, 'below the lattice spacing'),
])
def test_grid_preconditions(resolution, h_trunc, message):
    with pytest.raises(DomainError, match=message):
        build_masked_grid(Ball(1.0), resolution, h_trunc)


def test_asymptotic_dirichlet_data():
    dd = DistanceData(d=0.1, H_at_Q=1.0)
    assert asymptotic_dirichlet_data(dd, 3) == pytest.approx(2.294157, abs=1e-6)
    assert asymptotic_dirichlet_data(dd, 3, 'one-term') == pytest.approx(2.236068, abs=1e-6)
    flat = DistanceData(d=0.05, H_at_Q=0.0)
    assert asymptotic_dirichlet_data(flat, 4) == pytest.approx(10.0)
    assert asymptotic_dirichlet_data(flat, 4, 'one-term') == pytest.approx(10.0)
    with pytest.raises(DomainError):
        asymptotic_dirichlet_data(DistanceData(d=0.0, H_at_Q=1.0), 3)


def test_solver_config_validation(ball_grid):
    with pytest.raises(ConfigError):
        SolverConfig(mode='multigrid')
    with pytest.raises(ConfigError):
        SolverConfig(m_ladder=(4, 2))
    with pytest.raises(ConfigError, match='below 2·h_grid'):
        SolverConfig(h_trunc=0.1).validate(ball_grid)


def test_ball_solution_center_value(ball_solution):
    assert ball_solution.at([0.0, 0.0, 0.0]) == pytest.approx(1.0, abs=5e-3)
    assert ball_solution.residual_history[-1] <= 1e-8
    assert ball_solution.meta['max_principle_margin'] >= 0.0


def test_ball_solution_matches_layer_data(ball_solution, ball_grid):
    near = ball_grid.near_index
    exact = exact_ball_u(ball_grid.points[near])
    assert np.allclose(ball_solution.values[near], exact, rtol=1e-9)


def test_u_form_ball_center_converges_at_second_order():
    ball = Ball(1.0)
    errors, spacings = [], []
    for resolution in (17, 33, 65):
        grid = build_masked_grid(ball, resolution, 0.25)
        u = solve_truncated(ball, grid, SolverConfig(h_trunc=0.25, formulation='u-form'))
        assert u.meta['formulation'] == 'u-form'
        v = hyperbolic_radius(u)
        errors.append(abs(v.at([0.0, 0.0, 0.0]) - 1.0))
        spacings.append(grid.h_grid)
    assert errors[2] < errors[1] < errors[0]
    assert 1.5 <= observed_order(errors[1], errors[2], spacings[1], spacings[2]) <= 2.5


def test_monotone_sequence_increases():
    ball = Ball(1.0)
    grid = build_masked_grid(ball, 17, 0.25)
    cfg = SolverConfig(h_trunc=0.25, mode='monotone-sequence', m_ladder=(1.2, 1.6, 2.0, 4.0))
    u = solve_truncated(ball, grid, cfg)
    assert [f.meta['m'] for f in u.sequence] == [1.2, 1.6, 2.0, 4.0]
    for lower, upper in zip(u.sequence, u.sequence[1:] + [u]):
        assert np.all(lower.values <= upper.values + 1e-7)
    assert np.all(u.sequence[0].values <= 1.2 + 1e-7)


def test_exact_ball_transforms(exact_ball_field, ball_grid):
    v = hyperbolic_radius(exact_ball_field)
    w = renormalized_w(v)
    r2 = np.sum(ball_grid.points ** 2, axis=1)
    assert np.allclose(v.values, 1.0 - r2, atol=1e-12)
    assert np.allclose(w.values, -1.0, atol=1e-9)


def test_constant_u_in_four_dimensions():
    grid = build_masked_grid(Ball(1.0, n=4), 17, 0.25)
    u = ScalarField(grid=grid, values=np.full(grid.size, 2.0))
    assert np.allclose(hyperbolic_radius(u).values, 0.5)


def test_v_equation_is_exact_on_the_ball(exact_ball_field):
    residual = v_equation_residual(hyperbolic_radius(exact_ball_field))
    assert np.nanmax(np.abs(residual.values)) <= 1e-9


def test_ball_critical_point_is_the_center(exact_ball_field):
    points = hyperbolic_critical_points(hyperbolic_radius(exact_ball_field))
    assert len(points) == 1
    assert np.allclose(points[0]['point'], 0.0, atol=1e-12)
    assert points[0]['value'] == pytest.approx(1.0)
    assert points[0]['label'] == 'max'


def test_gradient_of_a_linear_field(ball_grid):
    field = ScalarField.from_function(ball_grid, lambda X, dd: 2.0 * X[:, 0] - X[:, 2], tag='v')
    grad = gradient_vectors(field)
    # Layer nodes with no active neighbour along an axis stay NaN
    finite = np.all(np.isfinite(grad), axis=1)
    assert finite[ball_grid.deep_index].all()
    assert np.allclose(grad[finite], [2.0, 0.0, -1.0], atol=1e-12)


def test_observed_order():
    assert observed_order(4e-3, 1e-3, 0.1, 0.05) == pytest.approx(2.0)
    assert np.isnan(observed_order(0.0, 1e-3, 0.1, 0.05))


def test_v_form_reproduces_the_ball_quadratic(ball_solution, ball_grid):
    v = hyperbolic_radius(ball_solution)
    r2 = np.sum(ball_grid.points ** 2, axis=1)
    assert ball_solution.meta['formulation'] == 'v-form'
    assert np.max(np.abs(v.values - (1.0 - r2))) <= 1e-6


def test_v_jacobian_matches_directional_differences():
    grid = build_masked_grid(Ball(1.0), 17, 0.25)
    rng = np.random.default_rng(0)
    V = 1.0 - np.sum(grid.points ** 2, axis=1) + 0.1 * grid.points[:, 0]
    X = np.zeros(grid.size)
    X[grid.deep_index] = rng.standard_normal(grid.deep_index.size)
    eps = 1e-3
    # v_residual is quadratic in V, so the central difference is exact
    expected = (v_residual(grid, V + eps * X) - v_residual(grid, V - eps * X)) / (2.0 * eps)
    assert np.allclose(v_jacobian(grid, V) @ X[grid.deep_index], expected, atol=1e-8)


@pytest.fixture(scope='module')
def ellipsoid_solutions():
    """Ellipsoid(1, 1, 0.5) at resolutions 33 and 65 with h_trunc = 2 h_grid"""
    dom = Ellipsoid([1.0, 1.0, 0.5])
    solutions = []
    for resolution, h_trunc in ((33, 0.125), (65, 0.0625)):
        grid = build_masked_grid(dom, resolution, h_trunc)
        solutions.append(solve_truncated(dom, grid, SolverConfig(h_trunc=h_trunc)))
    return dom, solutions


def test_ellipsoid_sandwich_on_the_axis_normals(ellipsoid_solutions):
    dom, solutions = ellipsoid_solutions
    for u in solutions:
        grid = u.grid
        P = grid.points
        on_x_axis = (P[:, 1] == 0.0) & (P[:, 2] == 0.0) & (P[:, 0] > 0.0)
        on_z_axis = (P[:, 0] == 0.0) & (P[:, 1] == 0.0) & (P[:, 2] > 0.0)
        d = grid.distance.d
        nodes = np.nonzero((on_x_axis | on_z_axis) & (d <= dom.r0))[0]
        assert nodes.size >= 4
        lower, upper = sandwich_bounds(d[nodes], 3, dom.r0)
        assert np.all(u.values[nodes] >= lower * (1.0 - 5e-3))
        assert np.all(u.values[nodes] <= upper * (1.0 + 5e-3))


def test_ellipsoid_w_approaches_minus_H_under_refinement(ellipsoid_solutions):
    _, solutions = ellipsoid_solutions
    gaps = []
    for u in solutions:
        grid = u.grid
        w = renormalized_w(hyperbolic_radius(u))
        d = grid.distance.d
        band = grid.deep & (d < 2.0 * grid.h_trunc)
        gaps.append(float(np.max(np.abs(w.values[band] + grid.distance.H_at_Q[band]))))
    assert gaps[1] < gaps[0]


def test_ellipsoid_critical_point_is_the_center(ellipsoid_solutions):
    _, solutions = ellipsoid_solutions
    fine = solutions[-1]
    points = hyperbolic_critical_points(hyperbolic_radius(fine))
    assert points
    assert np.allclose(points[0]['point'], 0.0, atol=0.5 * fine.grid.h_grid)
    assert points[0]['label'] in ('max', 'degenerate')


def test_shell_critical_set_is_the_ridge_sphere():
    shell = Shell(0.5, 1.0)
    grid = build_masked_grid(shell, 33, 0.125)
    v = hyperbolic_radius(solve_truncated(shell, grid, SolverConfig(h_trunc=0.125)))
    profile = solve_radial_maximal(3, shell, 512)
    ridge = profile.r[np.argmax(profile.v)]
    points = hyperbolic_critical_points(v)
    assert points
    radii = np.linalg.norm([p['point'] for p in points], axis=1)
    assert np.all(np.abs(radii - ridge) <= 0.1)
