import numpy as np
import pytest

from src.errors import DomainError
from src.models.grid import observed_order
from src.models.strip import (
    StripField, apply_L0, apply_L1, assemble_model_solution, d2_dT2, d_dT, euler_D, invert_model_operator,
    k_tilde, laplacian_y, solve_strip_poisson, strip_k,
)
from src.routes.fuchsian import ball_L1_coefficients, operator_identity_defect


@pytest.mark.parametrize('m', [0, 1, 2])
def test_L0_on_powers_of_T(m):
    n = 3
    f = StripField.from_function(1.0, n, 8, 16, lambda Y, T: T ** m + 0.0 * Y[0])
    expected = (m + 2) * (m + 1 - n) * f.T_mesh ** m
    assert np.allclose(apply_L0(f).values, expected, atol=1e-10)


def test_L0_of_a_constant_in_three_dimensions():
    f = StripField.from_function(1.0, 3, 8, 16, lambda Y, T: np.ones(T.shape))
    assert np.allclose(apply_L0(f).values, -4.0)


def test_L0_on_a_periodic_mode():
    theta = 1.0
    f = StripField.from_function(theta, 3, 32, 16, lambda Y, T: T ** 2 * np.sin(np.pi * Y[0] / theta))
    Y, T = np.meshgrid(f.y[0], f.T, indexing='ij')
    expected = -(np.pi / theta) ** 2 * T ** 4 * np.sin(np.pi * Y / theta)
    assert np.allclose(apply_L0(f).values, expected, atol=1e-10)


def test_L0prime_differs_from_L0_by_the_euler_shift():
    assert operator_identity_defect(1.0, 3, 32, 32) <= 1e-10
    assert operator_identity_defect(1.0, 4, [16, 8], 16) <= 1e-10


def test_spectral_laplacian_in_two_periodic_directions():
    theta = 0.5
    f = StripField.from_function(theta, 4, [16, 8], 8,
                                 lambda Y, T: np.cos(np.pi * Y[0] / theta) * np.sin(2 * np.pi * Y[1] / theta) + 0.0 * T)
    expected = -5.0 * (np.pi / theta) ** 2 * f.values
    assert np.allclose(laplacian_y(f), expected, atol=1e-9)


def test_euler_operator_is_exact_on_quadratics():
    f = StripField.from_function(1.0, 3, 4, 8, lambda Y, T: 3.0 * T ** 2 - T + 0.0 * Y[0])
    assert np.allclose(euler_D(f), 6.0 * f.T_mesh ** 2 - f.T_mesh, atol=1e-12)


def test_strip_poisson_with_constant_source():
    k = strip_k(1.0, 3, 8, 32)
    h = solve_strip_poisson(k, k.values)
    assert np.allclose(h, k.T_mesh * 1.0 - 0.5 * k.T_mesh ** 2, atol=1e-12)


def test_k_tilde_of_a_constant_is_the_constant():
    k = strip_k(1.0, 3, 8, 32, mean=2.5)
    assert np.allclose(k_tilde(k).values, 2.5, atol=1e-14)


def test_inverse_of_a_constant_source():
    k = strip_k(1.0, 3, 16, 64)
    inverse = invert_model_operator(k, 3)
    assert np.max(np.abs(inverse.f0.values + 0.5)) <= 1e-8
    diagnostics = inverse.diagnostics()
    assert diagnostics['inversion_residual'] <= 1e-8
    assert diagnostics['k_tilde_trace'] <= 1e-12


def test_inverse_trace_for_a_Y_dependent_source():
    k = strip_k(1.0, 3, 128, 128, kind='cosine')
    inverse = invert_model_operator(k, 3)
    trace = inverse.f0.values[..., 0]
    assert np.max(np.abs(trace + 0.5 * k.values[..., 0])) <= 1e-6
    assert inverse.diagnostics()['D_f0_at_zero'] <= 1e-12


def test_inversion_residual_converges_at_second_order():
    coarse = invert_model_operator(strip_k(1.0, 3, 64, 64, kind='cosine'), 3).diagnostics()
    fine = invert_model_operator(strip_k(1.0, 3, 128, 128, kind='cosine'), 3).diagnostics()
    assert fine['inversion_residual'] <= 1e-4
    assert observed_order(coarse['inversion_residual'], fine['inversion_residual'], 2.0, 1.0) >= 1.5


def test_T_derivatives_are_exact_on_cubics_at_both_ends():
    T = np.linspace(0.0, 1.0, 9)
    values = T ** 3 - 2.0 * T ** 2
    assert np.allclose(d_dT(values, T[1]), 3.0 * T ** 2 - 4.0 * T, atol=1e-10)
    assert np.allclose(d2_dT2(values, T[1]), 6.0 * T - 4.0, atol=1e-9)


def test_assembled_solution_trace():
    k = strip_k(1.0, 3, 32, 32, kind='cosine')
    f, report = assemble_model_solution(k, 3)
    assert report['a'] == pytest.approx(0.5)
    assert np.allclose(f.values[..., 0], -k.values[..., 0] / 4.0, atol=1e-10)
    assert report['trace_identity'] <= 1e-10
    assert report['expected_trace_factor'] == pytest.approx(0.0)


def test_assembly_with_another_constant():
    k = strip_k(1.0, 3, 16, 16)
    f, report = assemble_model_solution(k, 3, a=0.3)
    assert report['expected_trace_factor'] == pytest.approx(-0.4)
    assert report['trace_identity'] <= 1e-10


def test_L1_vanishes_at_the_boundary_row():
    k = strip_k(1.0, 3, 32, 32, kind='cosine')
    f0 = invert_model_operator(k, 3).f0
    grad, lap = ball_L1_coefficients(f0)
    L1 = apply_L1(f0, grad, lap).values
    assert np.allclose(L1[..., 0], 0.0, atol=1e-12)
    assert np.max(np.abs(L1[..., 1])) < np.max(np.abs(L1[..., -1]))


def test_strip_validation():
    with pytest.raises(DomainError):
        StripField.axes(1.0, 3, 8, 2)
    with pytest.raises(DomainError):
        StripField.axes(1.0, 4, [8], 8)
    with pytest.raises(DomainError):
        strip_k(1.0, 3, 8, 8, kind='gaussian')
    with pytest.raises(DomainError):
        invert_model_operator(strip_k(1.0, 3, 8, 8), 4)
    with pytest.raises(DomainError, match='theta must be positive'):
        strip_k(0.0, 3, 8, 8)
