import os

import click
import numpy as np

from src.grid_files import write_convergence_table, write_field, write_json
from src.models.domain import Ball
from src.models.grid import hyperbolic_critical_points, observed_order
from src.routes.common import EXIT_OK, SolveCache, config_options, run_command


def center_of(domain):
    return getattr(domain, 'center', 0.5 * (domain.lower + domain.upper))


def exact_ball_v(domain, points):
    """v = (R^2 - |x - c|^2)/R for the ball"""
    r2 = np.sum((points - domain.center) ** 2, axis=1)
    return (domain.radius ** 2 - r2) / domain.radius


def resolution_summary(domain, resolution, solve):
    grid, u, v = solve['grid'], solve['u'], solve['v']
    summary = {
        'resolution': resolution,
        'grid': grid.to_dict(),
        'iterations': u.iterations,
        'residual_history': u.residual_history,
        'max_principle_margin': u.meta.get('max_principle_margin'),
        'critical_points': hyperbolic_critical_points(v),
    }
    if u.sequence:
        summary['monotone_sequence'] = [{'m': f.meta['m'], 'iterations': f.iterations} for f in u.sequence]
    try:
        summary['v_center'] = v.at(center_of(domain))
    except ValueError:
        summary['v_center'] = None
    if isinstance(domain, Ball):
        exact = exact_ball_v(domain, grid.points)
        mask = grid.distance.d > 0.2 * domain.radius
        summary['max_relative_error'] = float(np.max(np.abs(v.values[mask] - exact[mask]) / exact[mask]))
    return summary


def convergence_rows(config, summaries):
    """Center-value errors: against the closed form for balls, else against the next finer grid"""
    domain = config.domain
    rows = []
    for i, s in enumerate(summaries):
        if s['v_center'] is None:
            error = float('nan')
        elif isinstance(domain, Ball):
            error = abs(s['v_center'] - domain.radius)
        elif i + 1 < len(summaries) and summaries[i + 1]['v_center'] is not None:
            error = abs(s['v_center'] - summaries[i + 1]['v_center'])
        else:
            error = float('nan')
        rows.append({'resolution': s['resolution'], 'h_grid': s['grid']['h_grid'],
                     'h_trunc': s['grid']['h_trunc'], 'error': error})
    for coarse, fine in zip(rows, rows[1:]):
        fine['order'] = observed_order(coarse['error'], fine['error'], coarse['h_grid'], fine['h_grid'])
    return rows


@click.command('solve')
@config_options
@run_command('solve')
def solve_command(config, run):
    """Solve the truncated Dirichlet problem at every configured resolution"""
    cache = SolveCache(config)
    out = config.output_dir
    kind = config.domain.kind
    summaries = []
    for resolution in config.resolutions:
        solve = cache.get(resolution)
        for tag in ('u', 'v', 'w'):
            write_field(os.path.join(out, f'{kind}_{resolution}_{tag}.grid'), solve[tag])
        summaries.append(resolution_summary(config.domain, resolution, solve))

    rows = convergence_rows(config, summaries)
    write_convergence_table(os.path.join(out, 'convergence.csv'), rows)
    summary = {'domain': config.domain.to_dict(), 'resolutions': summaries, 'convergence': rows}
    write_json(os.path.join(out, 'solve_summary.json'), summary)
    return summary, EXIT_OK
