import os

import click
import numpy as np

from src.grid_files import write_json, write_strip
from src.models.grid import observed_order
from src.models.strip import (
    StripField, apply_L0, apply_L0prime, apply_L1, assemble_model_solution, euler_D,
    invert_model_operator, strip_k,
)
from src.routes.common import EXIT_OK, EXIT_VERIFICATION, config_options, run_command


def operator_identity_defect(theta, n, y_points, t_points, seed=0):
    """max |L0'f - L0 f - (n-2)(D+2)f| on a random trigonometric strip field"""
    rng = np.random.default_rng(seed)
    coeffs = rng.standard_normal(6)

    def func(Y, T):
        y = Y[0]
        return (coeffs[0] + coeffs[1] * T + coeffs[2] * T ** 2 * np.cos(np.pi * y / theta)
                + coeffs[3] * np.sin(2 * np.pi * y / theta) * np.exp(-T) + coeffs[4] * T ** 3
                + coeffs[5] * np.cos(3 * np.pi * y / theta) * np.sin(T))

    f = StripField.from_function(theta, n, y_points, t_points, func)
    lhs = apply_L0prime(f).values - apply_L0(f).values
    rhs = (n - 2) * (euler_D(f) + 2.0 * f.values)
    return float(np.max(np.abs(lhs - rhs)))


def ball_L1_coefficients(f):
    """Strip coefficients of a ball of radius 2θ: ∇̃d = 0 and Δd = -(n-1)/(2θ - T)"""
    grad = [np.zeros_like(f.values) for _ in range(f.n - 1)]
    return grad, -(f.n - 1) / (2.0 * f.theta - f.T_mesh)


def fuchsian_report(config):
    n = config.n
    settings = config.fuchsian
    theta = float(settings['theta'])
    y_points = settings['y_points']
    t_points = int(settings['t_points'])
    k_spec = settings['k']
    thresholds = config.thresholds

    k = strip_k(theta, n, y_points, t_points, **k_spec)
    inverse = invert_model_operator(k, n)
    diagnostics = inverse.diagnostics()
    f, trace = assemble_model_solution(k, n)

    data = {
        'strip': k.to_dict(),
        'k': k_spec,
        'diagnostics': diagnostics,
        'assembly': trace,
        'operator_identity': operator_identity_defect(theta, n, y_points, t_points, config.seed),
    }
    grad, lap = ball_L1_coefficients(inverse.f0)
    L1 = apply_L1(inverse.f0, grad, lap).values
    data['L1_first_rows'] = float(np.max(np.abs(L1[..., :4])))

    checks = [diagnostics['trace_defect'] <= thresholds['trace_tolerance'],
              trace['trace_defect'] <= thresholds['trace_tolerance'],
              data['operator_identity'] <= thresholds['operator_identity']]
    if k_spec['kind'] == 'constant':
        data['f0_deviation'] = float(np.max(np.abs(inverse.f0.values + 0.5 * k_spec.get('mean', 1.0))))
        checks.append(data['f0_deviation'] <= thresholds['f0_tolerance'])
    else:
        coarse_k = strip_k(theta, n, _halve(y_points), t_points // 2, **k_spec)
        coarse = invert_model_operator(coarse_k, n).diagnostics()
        data['coarse_inversion_residual'] = coarse['inversion_residual']
        data['inversion_order'] = observed_order(coarse['inversion_residual'], diagnostics['inversion_residual'],
                                                 2.0, 1.0)
        checks.append(diagnostics['inversion_residual'] <= thresholds['inversion_residual'])
        checks.append(data['inversion_order'] >= thresholds['inversion_order_min'])
    data['passed'] = bool(all(checks))
    return inverse, f, data


def _halve(y_points):
    if np.isscalar(y_points):
        return max(int(y_points) // 2, 1)
    return [max(int(m) // 2, 1) for m in y_points]


@click.command('fuchsian-invert')
@config_options
@click.option('--theta', type=float, default=None, help='Strip height.')
@click.option('--y-points', type=int, default=None, help='Periodic points along Y1.')
@click.option('--t-points', type=int, default=None, help='Cells along T.')
@click.option('--k-kind', type=click.Choice(['constant', 'cosine']), default=None, help='Source term.')
@run_command('fuchsian-invert')
def fuchsian_command(config, run, theta, y_points, t_points, k_kind):
    """Invert the model operator on the periodic strip and report the identities"""
    settings = config.fuchsian
    if theta is not None:
        settings['theta'] = theta
    if y_points is not None:
        settings['y_points'] = y_points
    if t_points is not None:
        settings['t_points'] = t_points
    if k_kind is not None:
        settings['k'] = dict(settings['k'], kind=k_kind)

    inverse, f, data = fuchsian_report(config)
    out = config.output_dir
    write_strip(os.path.join(out, 'strip_f0.grid'), inverse.f0, 'f0')
    write_strip(os.path.join(out, 'strip_f.grid'), f, 'f')
    write_json(os.path.join(out, 'fuchsian_summary.json'), data)
    return data, EXIT_OK if data['passed'] else EXIT_VERIFICATION
