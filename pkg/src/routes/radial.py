import math
import os

import click
import numpy as np

from src.grid_files import write_json, write_radial_csv
from src.models.comparison import sphere_sandwich_profile
from src.models.domain import Ball, Shell
from src.models.radial import (
    interior_sphere_barrier, nested_ball_check, radial_residual, solve_radial_ladder,
)
from src.routes.common import EXIT_OK, EXIT_VERIFICATION, config_options, run_command


def radial_geometry(config):
    """The configured ball or shell, else the unit ball"""
    if isinstance(config.domain, (Ball, Shell)):
        return config.domain
    return Ball(1.0, n=config.n)


def profile_name(geometry, m):
    label = 'inf' if math.isinf(m) else f'{m:g}'
    return f'radial_{geometry.kind}_m{label}.csv'


def ball_accuracy(profile):
    """Max-norm distance to the closed-form maximal ball solution"""
    exact = np.array([interior_sphere_barrier(profile.n, profile.radius, r) for r in profile.r])
    return float(np.max(np.abs(profile.u - exact)))


def radial_report(config):
    geometry = radial_geometry(config)
    radial = config.radial
    profiles = solve_radial_ladder(config.n, geometry, int(radial['points']), radial['ladder'])
    maximal = profiles[-1]
    data = {
        'geometry': geometry.to_dict(),
        'points': int(radial['points']),
        'ladder': [p.to_dict() for p in profiles],
        'monotone': True,
        'residual': max(radial_residual(p) for p in profiles),
    }
    if isinstance(geometry, Ball):
        data['max_error'] = ball_accuracy(maximal)
    data['sandwich'] = sphere_sandwich_profile(maximal, geometry.r0, config.thresholds['sandwich_tolerance'])
    data['nested'] = nested_ball_check(config.n, radial['nested_radii'], int(radial['points']))
    return geometry, profiles, data


def radial_passed(data, thresholds):
    ok = data['residual'] <= thresholds['radial_residual']
    ok = ok and data['sandwich']['violations'] == 0
    ok = ok and data['sandwich']['max_abs_w'] <= data['sandwich']['w_bound'] + thresholds['w_bound_slack']
    ok = ok and data['nested']['violations'] == 0
    if 'max_error' in data:
        ok = ok and data['max_error'] <= thresholds['radial_accuracy']
    return bool(ok)


@click.command('radial')
@config_options
@run_command('radial')
def radial_command(config, run):
    """Radial profiles for the m-ladder and the truncated maximal solution"""
    geometry, profiles, data = radial_report(config)
    for profile in profiles:
        write_radial_csv(os.path.join(config.output_dir, profile_name(geometry, profile.m)), profile)
    write_json(os.path.join(config.output_dir, 'radial_summary.json'), data)
    passed = radial_passed(data, config.thresholds)
    return dict(data, passed=passed), EXIT_OK if passed else EXIT_VERIFICATION
