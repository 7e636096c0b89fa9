import logging
import os
import sys
# DON'T CHANGE THIS !!!
sys.path.insert(0, os.path.dirname(os.path.dirname(__file__)))

import click

from src.routes.fuchsian import fuchsian_command
from src.routes.radial import radial_command
from src.routes.report import report_command
from src.routes.solve import solve_command
from src.routes.verify import verify_command

LOG_LEVELS = {0: logging.WARNING, 1: logging.INFO}


@click.group()
@click.option('-v', '--verbose', count=True, help='-v for info, -vv for debug logging on stderr.')
@click.version_option('1.0.0', prog_name='hyprad')
def cli(verbose):
    """Maximal Loewner-Nirenberg solutions, hyperbolic radius and their verification"""
    logging.basicConfig(
        stream=sys.stderr,
        level=LOG_LEVELS.get(verbose, logging.DEBUG),
        format=os.getenv('HYPRAD_LOG_FORMAT', '%(asctime)s %(levelname)s %(name)s: %(message)s'),
    )


# Register commands
cli.add_command(solve_command)
cli.add_command(verify_command)
cli.add_command(fuchsian_command)
cli.add_command(radial_command)
cli.add_command(report_command)


if __name__ == '__main__':
    cli()
