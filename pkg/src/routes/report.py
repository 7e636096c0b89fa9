import click

from src.database_sqlite import use_database
from src.models.run import Run
from src.routes.common import EXIT_OK, EXIT_VALIDATION, config_options, emit, load_config


@click.command('report')
@config_options
@click.option('--limit', type=int, default=20, show_default=True, help='Most recent runs to list.')
@click.option('--run-id', type=int, default=None, help='Show a single run with its check results.')
@click.option('--command', 'command_name', default=None, help='Only runs of this subcommand.')
def report_command(config_path, out_dir, checks, resolutions, limit, run_id, command_name):
    """List recorded runs from the ledger"""
    ctx = click.get_current_context()
    try:
        config = load_config(config_path, out_dir, checks, resolutions)
    except ValueError as e:
        click.echo(f'error: {e}', err=True)
        emit({'command': 'report', 'status': 'invalid', 'error': str(e)})
        ctx.exit(EXIT_VALIDATION)

    use_database(config.database_path())
    if run_id is not None:
        run = Run.get_by_id(run_id)
        if not run:
            click.echo(f'error: run {run_id} not found', err=True)
            emit({'command': 'report', 'status': 'invalid', 'error': f'run {run_id} not found'})
            ctx.exit(EXIT_VALIDATION)
        emit({'command': 'report', 'status': 'ok', 'run': run.to_dict(include_checks=True)})
        ctx.exit(EXIT_OK)

    runs = Run.get_all(limit=limit, command=command_name)
    emit({'command': 'report', 'status': 'ok', 'runs': [run.to_dict() for run in runs], 'limit': limit})
    ctx.exit(EXIT_OK)
