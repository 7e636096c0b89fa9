import functools
import json
import logging
import os

import click

from src.database_sqlite import use_database
from src.errors import ConfigError, HypradError
from src.grid_files import finite_json, to_jsonable
from src.models.config import RunConfig
from src.models.grid import build_masked_grid, hyperbolic_radius, renormalized_w, solve_truncated
from src.models.run import CheckResult, Run

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_SOLVER = 2
EXIT_VERIFICATION = 3

DEFAULT_DOCUMENT = {'domain': {'kind': 'ball', 'radius': 1.0}}


def config_options(command):
    """--config, --out, --check and --resolution, shared by every command"""
    options = [
        click.option('--config', 'config_path', type=click.Path(dir_okay=False), default=None,
                     help='JSON run configuration.'),
        click.option('--out', 'out_dir', type=click.Path(file_okay=False), default=None,
                     help='Output directory (overrides output_dir).'),
        click.option('--check', 'checks', multiple=True, help='Suite to run; repeatable.'),
        click.option('--resolution', 'resolutions', type=int, multiple=True,
                     help='Grid resolution per axis; repeatable, overrides the config list.'),
    ]
    for option in reversed(options):
        command = option(command)
    return command


def load_config(config_path, out_dir=None, checks=(), resolutions=()):
    """Config document plus command-line overrides"""
    data = dict(DEFAULT_DOCUMENT)
    if config_path:
        data = RunConfig.read_document(config_path)
        if not isinstance(data, dict):
            raise ConfigError('config must be a JSON object')
    if out_dir:
        data['output_dir'] = out_dir
    if checks:
        data['checks'] = list(checks)
    if resolutions:
        data['resolutions'] = sorted(set(resolutions))
    return RunConfig.from_dict(data)


def exit_code_for(error):
    """ValueError subclasses are validation problems, everything else is a solver failure"""
    if isinstance(error, ValueError):
        return EXIT_VALIDATION
    return EXIT_SOLVER


def emit(data):
    """Strict JSON summary on stdout; sorted keys and no run id keep reruns byte-identical"""
    click.echo(json.dumps(finite_json(data), sort_keys=True, indent=2, allow_nan=False, default=to_jsonable))


def run_command(name):
    """Wrap a command body: ledger row, error mapping to exit codes, JSON summary.

    The body receives (config, run, **kwargs) and returns (summary, exit_code).
    """
    def decorator(body):
        @functools.wraps(body)
        def wrapper(config_path, out_dir, checks, resolutions, **kwargs):
            ctx = click.get_current_context()
            try:
                config = load_config(config_path, out_dir, checks, resolutions)
            except ValueError as e:
                click.echo(f'error: {e}', err=True)
                emit({'command': name, 'status': 'invalid', 'error': str(e)})
                ctx.exit(EXIT_VALIDATION)

            os.makedirs(config.output_dir, exist_ok=True)
            run = None
            try:
                use_database(config.database_path())
                run = Run.create(name, config)
                click.echo(f'run {run.id}', err=True)
                summary, code = body(config, run, **kwargs)
                status = 'ok' if code == EXIT_OK else 'failed'
            except HypradError as e:
                code = exit_code_for(e)
                status = 'error'
                summary = {'error': str(e), 'error_type': type(e).__name__}
                if getattr(e, 'residual_history', None):
                    summary['residual_history'] = e.residual_history
                click.echo(f'error: {e}', err=True)
            except Exception as e:
                code = EXIT_SOLVER
                status = 'error'
                summary = {'error': str(e), 'error_type': type(e).__name__}
                logger.exception('%s crashed', name)
            summary = dict(summary, command=name, status=status, exit_code=code)
            if run is not None:
                try:
                    run.finish(status, code, summary)
                except Exception as e:
                    logger.error('could not record the outcome of run %s: %s', run.id, e)
            emit(summary)
            ctx.exit(code)
        return wrapper
    return decorator


def record_check(run, name, status, payload):
    CheckResult.create(run.id, name, status, payload)


class SolveCache:
    """Truncated solves per resolution, shared by the suites of one run"""

    def __init__(self, config):
        self.config = config
        self._solves = {}

    def get(self, resolution):
        if resolution not in self._solves:
            config = self.config
            cfg = config.solver_for(resolution)
            grid = build_masked_grid(config.domain, resolution, cfg.h_trunc)
            click.echo(f'solving at resolution {resolution} (h_trunc={cfg.h_trunc:g})', err=True)
            u = solve_truncated(config.domain, grid, cfg)
            v = hyperbolic_radius(u)
            self._solves[resolution] = {'grid': grid, 'u': u, 'v': v, 'w': renormalized_w(v), 'cfg': cfg}
        return self._solves[resolution]

    @property
    def finest(self):
        return self.get(self.config.resolutions[-1])
