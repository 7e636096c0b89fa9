import logging
import os

import click
import numpy as np

from src.errors import ProjectionError, SolverError
from src.grid_files import write_json
from src.models.comparison import (
    BarrierSpec, alpha_supersolution_check, barrier_witness, choose_B, choose_delta, identity_checks,
    sample_collar, shell_fit, shell_maxima, singular_barrier_values, sphere_sandwich_check,
    sphere_sandwich_profile, verify_tilde_w_bound, verify_tilde_w_profile,
)
from src.models.config import SUITES
from src.models.domain import Ball, Shell
from src.models.fuchsian import FuchsianOperatorContext, apply_L, fr_residual, max_abs
from src.models.grid import (
    ScalarField, expansion_defect, gradient_norm, observed_order,
)
from src.models.radial import positive_power, solve_radial_maximal
from src.routes.common import (
    EXIT_OK, EXIT_SOLVER, EXIT_VERIFICATION, SolveCache, config_options, record_check, run_command,
)
from src.routes.fuchsian import fuchsian_report
from src.routes.radial import radial_passed, radial_report
from src.routes.solve import exact_ball_v

logger = logging.getLogger(__name__)

EXPANSION_SHELLS = (0.02, 0.04, 0.08)


def suite_identities(config, cache):
    """Closed-form L identities at random collar points of the domain"""
    results = identity_checks(config.domain, config.samples, config.seed, config.alpha,
                              tolerance=config.thresholds['identity_tolerance'])
    return {'checks': results, 'passed': all(r['violations'] == 0 for r in results)}


def suite_sandwich(config, cache):
    domain = config.domain
    thresholds = config.thresholds
    data = {'grid': sphere_sandwich_check(domain, cache.finest['u'], thresholds['grid_sandwich_tolerance'])}
    passed = data['grid']['violations'] == 0
    if isinstance(domain, (Ball, Shell)):
        profile = solve_radial_maximal(config.n, domain, int(config.radial['points']))
        radial = sphere_sandwich_profile(profile, domain.r0, thresholds['sandwich_tolerance'])
        data['radial'] = radial
        passed = passed and radial['violations'] == 0
        passed = passed and radial['max_abs_w'] <= radial['w_bound'] + thresholds['w_bound_slack']
    data['passed'] = bool(passed)
    return data


def suite_expansion(config, cache):
    """|v - 2d| ≤ C h^2 on {h ≤ d ≤ 2h} and the slope of |v - 2d + d^2 H| over shells of solved nodes"""
    thresholds = config.thresholds
    rows = []
    for resolution in config.resolutions:
        solve = cache.get(resolution)
        grid, v = solve['grid'], solve['v']
        d = grid.distance.d
        h = grid.h_trunc
        band = (d >= h - grid.h_grid) & (d <= 2.0 * h)
        leading = float(np.max(np.abs(v.values[band] - 2.0 * d[band]))) / h ** 2
        defect = expansion_defect(v)
        maxima = shell_maxima(defect, d, EXPANSION_SHELLS, 0.5 * grid.h_grid, grid.deep)
        rows.append({'resolution': resolution, 'h_trunc': h, 'C': leading, 'shell_maxima': maxima,
                     'unresolved': [s for s, m in zip(EXPANSION_SHELLS, maxima) if not np.isfinite(m)],
                     'slope': shell_fit(EXPANSION_SHELLS, maxima)['fitted_slope']})

    passed = True
    if len(rows) >= 2:
        ratio = rows[-1]['C'] / rows[-2]['C']
        passed = 0.5 <= ratio <= 2.0
    slopes = [r['slope'] for r in rows[-2:] if np.isfinite(r['slope'])]
    judged = len(slopes) == 2
    if judged:
        passed = passed and slopes[-1] >= thresholds['expansion_slope_min']
        passed = passed and abs(slopes[-1] - slopes[0]) <= thresholds['expansion_slope_spread']
    return {'shells': list(EXPANSION_SHELLS), 'rows': rows, 'slope_judged': judged, 'passed': bool(passed)}


def suite_gradient(config, cache):
    """|∇v| → 2 and |∇u|(2d)^{n/2} → n-2 at nodes with d below the gradient band"""
    thresholds = config.thresholds
    solve = cache.finest
    grid, u, v = solve['grid'], solve['u'], solve['v']
    n = grid.n
    d = grid.distance.d
    band = thresholds['gradient_band']
    grad_v = gradient_norm(v).values
    grad_u = gradient_norm(u).values
    mask = (d < band) & np.isfinite(grad_v) & np.isfinite(grad_u)
    if not mask.any():
        return {'samples': 0, 'band': band, 'h_trunc': grid.h_trunc, 'passed': False,
                'error': f'no node with d < {band:g} has a gradient stencil; '
                         f'h_trunc={grid.h_trunc:g} leaves the band empty'}
    deviation = np.abs(grad_v[mask] - 2.0)
    scaled = grad_u[mask] * (2.0 * d[mask]) ** (n / 2.0)
    return {
        'samples': int(mask.sum()),
        'band': band,
        'h_trunc': grid.h_trunc,
        'violations': int(np.sum(deviation > thresholds['gradient_tolerance'])),
        'worst_margin': float(thresholds['gradient_tolerance'] - deviation.max()),
        'max_deviation': float(deviation.max()),
        'u_gradient_scaled_mean': float(scaled.mean()),
        'u_gradient_target': n - 2,
        'passed': bool(deviation.max() <= thresholds['gradient_tolerance']),
    }


def suite_convergence(config, cache):
    """Observed order of v at the center; for balls also the relative error over d > 0.2 R.

    The v-form reproduces the ball's quadratic v up to solver tolerance, so
    ball errors below the exactness floor pass without an order.
    """
    thresholds = config.thresholds
    domain = config.domain
    rows = []
    for resolution in config.resolutions:
        solve = cache.get(resolution)
        grid, v = solve['grid'], solve['v']
        center = getattr(domain, 'center', 0.5 * (domain.lower + domain.upper))
        try:
            value = v.at(center)
        except ValueError:
            value = float('nan')
        row = {'resolution': resolution, 'h_grid': grid.h_grid, 'h_trunc': grid.h_trunc, 'v_center': value}
        if isinstance(domain, Ball):
            exact = exact_ball_v(domain, grid.points)
            mask = grid.distance.d > 0.2 * domain.radius
            row['error'] = abs(value - domain.radius)
            row['max_relative_error'] = float(np.max(np.abs(v.values[mask] - exact[mask]) / exact[mask]))
        rows.append(row)

    if not isinstance(domain, Ball):
        for coarse, fine in zip(rows, rows[1:]):
            coarse['error'] = abs(coarse['v_center'] - fine['v_center'])
        rows[-1]['error'] = float('nan')
    for coarse, fine in zip(rows, rows[1:]):
        fine['order'] = observed_order(coarse['error'], fine['error'], coarse['h_grid'], fine['h_grid'])

    reproduced = isinstance(domain, Ball) and all(r['error'] <= thresholds['exactness_floor'] for r in rows)
    orders = [r['order'] for r in rows[1:] if np.isfinite(r.get('order', np.nan))]
    passed = reproduced or (bool(orders) and thresholds['order_min'] <= orders[-1] <= thresholds['order_max'])
    if isinstance(domain, Ball):
        passed = passed and rows[-1]['max_relative_error'] <= thresholds['ball_relative_error']
    return {'rows': rows, 'reproduced': bool(reproduced), 'passed': bool(passed)}


def suite_radial(config, cache):
    _, _, data = radial_report(config)
    data['passed'] = radial_passed(data, config.thresholds)
    return data


def suite_fuchsian(config, cache):
    """Strip inversion identities plus the two forms of L on the finest grid"""
    _, _, data = fuchsian_report(config)
    solve = cache.finest
    ctx = FuchsianOperatorContext(solve['grid'], config.alpha, config.delta)
    d_field = ScalarField(grid=solve['grid'], values=ctx.dd.d, tag='w')
    nondiv = apply_L(ctx, d_field)
    div = apply_L(ctx, d_field, form='divergence')
    rows = ctx.rows()
    closed = 3 * (2 - ctx.n) * ctx.dd.d[rows] + ctx.dd.d[rows] ** 2 * ctx.dd.laplacian_d[rows]
    data['grid_L_of_d'] = {
        'nondivergence_error': float(np.max(np.abs(nondiv.values[rows] - closed))),
        'divergence_error': float(np.max(np.abs(div.values[rows] - closed))),
        'forms_difference': float(np.max(np.abs(nondiv.values[rows] - div.values[rows]))),
        'skipped': nondiv.meta['skipped'],
    }
    return data


def suite_fr_residual(config, cache):
    """Renormalized residual of the solved fields, and of the closed-form solution on balls"""
    domain = config.domain
    rows = []
    for resolution in config.resolutions:
        solve = cache.get(resolution)
        grid = solve['grid']
        ctx = FuchsianOperatorContext(grid, config.alpha, config.delta)
        residual = fr_residual(ctx, solve['u'])
        band = ctx.rows(lower=2.0 * grid.h_trunc)
        row = {'resolution': resolution, 'h_grid': grid.h_grid,
               'solved_max': float(np.max(np.abs(residual.values[band]))) if band.size else float('nan')}
        if isinstance(domain, Ball):
            exact_u = positive_power(exact_ball_v(domain, grid.points), -(grid.n - 2) / 2.0)
            exact = fr_residual(ctx, exact_u)
            row['exact_max'] = max_abs(exact)
            row['exact_C'] = row['exact_max'] / grid.h_grid ** 2
        rows.append(row)
    passed = True
    if isinstance(domain, Ball):
        passed = all(r['exact_C'] <= 1.0 for r in rows)
    return {'rows': rows, 'passed': bool(passed)}


def suite_tilde_w(config, cache):
    """|w + H| ≤ A d on the collar with A from the barrier slope"""
    thresholds = config.thresholds
    domain = config.domain
    solve = cache.finest
    delta = config.delta or choose_delta(domain, config.samples, config.seed) or domain.r0 / 8.0
    grid_report = verify_tilde_w_bound(solve['w'], delta=delta, shells=EXPANSION_SHELLS,
                                       slack=thresholds['w_bound_slack'])
    data = {'grid': grid_report}
    passed = grid_report['violations'] == 0
    slope = grid_report.get('fitted_slope', float('nan'))
    if np.isfinite(slope) and len([m for m in grid_report['shell_maxima'] if np.isfinite(m)]) == 3:
        passed = passed and slope >= thresholds['tilde_w_slope_min']
    if isinstance(domain, Shell):
        profile = solve_radial_maximal(config.n, domain, 4096)
        shells = [domain.r0 / 8.0, domain.r0 / 4.0, domain.r0 / 2.0]
        radial = verify_tilde_w_profile(profile, shells, domain.r0)
        data['radial'] = radial
        passed = passed and radial['fitted_slope'] >= thresholds['radial_tilde_w_slope_min']
    data['passed'] = bool(passed)
    return data


def suite_barriers(config, cache):
    """z_ε witness, the α-supersolution and the sign of the singular barrier image"""
    domain = config.domain
    n = config.n
    delta = config.delta or choose_delta(domain, config.samples, config.seed) or domain.r0 / 8.0
    witness = barrier_witness(cache.finest['w'], delta=delta)
    alpha = alpha_supersolution_check(domain, config.alpha, delta=delta, samples=config.samples,
                                      seed=config.seed)
    _, dd = sample_collar(domain, config.samples, config.seed, upper=delta)
    spec = BarrierSpec('epsilon-singular', B=choose_B(dd, n), delta=delta)
    _, image = singular_barrier_values(dd, spec, n)
    singular = {'samples': int(dd.d.size), 'violations': int(np.sum(image > 0)),
                'worst_margin': float(-image.max()), 'B': spec.B,
                'condition': spec.conditions(dd, n)}
    passed = witness['violations'] == 0 and alpha['violations'] == 0 and singular['violations'] == 0
    return {'delta': delta, 'witness': witness, 'alpha_supersolution': alpha,
            'singular_barrier': singular, 'passed': bool(passed)}


SUITE_FUNCTIONS = {
    'identities': suite_identities,
    'sandwich': suite_sandwich,
    'expansion': suite_expansion,
    'gradient': suite_gradient,
    'convergence': suite_convergence,
    'radial': suite_radial,
    'fuchsian': suite_fuchsian,
    'fr-residual': suite_fr_residual,
    'tilde-w': suite_tilde_w,
    'barriers': suite_barriers,
}


def headline(payload):
    """samples/violations/worst_margin for the ledger row"""
    keys = ('samples', 'violations', 'worst_margin')
    if all(k in payload for k in keys):
        return {k: payload[k] for k in keys}
    for value in payload.values():
        if isinstance(value, dict) and all(k in value for k in keys):
            return {k: value[k] for k in keys}
    return {}


@click.command('verify')
@config_options
@run_command('verify')
def verify_command(config, run):
    """Run the verification suites and report pass/fail per suite"""
    names = config.checks or list(SUITES)
    cache = SolveCache(config)
    report = {}
    statuses = []
    for name in names:
        click.echo(f'suite {name}', err=True)
        try:
            payload = SUITE_FUNCTIONS[name](config, cache)
            status = 'passed' if payload['passed'] else 'failed'
        except (SolverError, ProjectionError) as e:
            payload = {'error': str(e), 'error_type': type(e).__name__,
                       'residual_history': getattr(e, 'residual_history', [])}
            status = 'solver-error'
        except Exception as e:
            logger.exception('suite %s crashed', name)
            payload = {'error': str(e), 'error_type': type(e).__name__}
            status = 'errored'
        statuses.append(status)
        payload['status'] = status
        report[name] = payload
        record_check(run, name, status, dict(payload, **headline(payload)))

    write_json(os.path.join(config.output_dir, 'verify_report.json'), report)
    return {'suites': report}, verify_exit_code(statuses)


def verify_exit_code(statuses):
    """3 on any failed or crashed suite; 2 when the only problems were solver failures"""
    if any(s in ('failed', 'errored') for s in statuses):
        return EXIT_VERIFICATION
    if 'solver-error' in statuses:
        return EXIT_SOLVER
    return EXIT_OK
