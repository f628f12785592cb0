"""
tessellate Application Factory
Creates the command-line parser and configures logging.
"""

import argparse
import logging
import os
import sys

# Add parent directory to path for imports
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from config import get_config


def _add_common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--config', help='JSON run configuration (schema 1)')
    parser.add_argument('--seed', type=int, help='64-bit master seed')
    parser.add_argument('--reps', type=int, help='number of replications')
    parser.add_argument('--dim', type=int, choices=(2, 3), help='dimension')
    parser.add_argument('--workers', type=int, help='replication workers')
    parser.add_argument('--out', help='output file')


def create_app(config_name: str = None) -> argparse.ArgumentParser:
    """
    Create the `tessellate` argument parser.

    Args:
        config_name: Configuration name (development, production, testing)

    Returns:
        Parser whose subcommands carry their handler in `handler`, called as
        handler(cfg, *[args.<name> for name in handler_args])
    """
    if config_name:
        os.environ['TESSELLATE_ENV'] = config_name
    config = get_config()

    # Configure logging
    level = config.LOG_LEVEL or ('DEBUG' if getattr(config, 'DEBUG', False) else 'INFO')
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )
    logger = logging.getLogger(__name__)

    from app.routes import commands

    parser = argparse.ArgumentParser(
        prog='tessellate',
        description='Shape-driven nested Markov tessellations: simulation, typical cells and statistics.',
    )
    sub = parser.add_subparsers(dest='command', required=True)

    simulate = sub.add_parser('simulate', help='simulate tessellations and export JSON lines')
    _add_common_flags(simulate)
    simulate.add_argument('--t', type=float, help='horizon')
    simulate.add_argument('--kernel', help='kernel name or kernel JSON object')
    simulate.add_argument('--svg', help='SVG rendering (2D only)')
    simulate.set_defaults(handler=commands.cmd_simulate)

    stats = sub.add_parser('stats', help='minus-sampled mean values as CSV')
    _add_common_flags(stats)
    stats.add_argument('--t', type=float, help='horizon')
    stats.add_argument('--kernel', help='kernel name or kernel JSON object')
    stats.add_argument('--csv', help='CSV report path')
    stats.set_defaults(handler=commands.cmd_stats)

    typical = sub.add_parser('typical-cell', help='typical-cell ensemble as JSON lines')
    _add_common_flags(typical)
    typical.add_argument('--kernel', help='kernel name or kernel JSON object')
    typical.add_argument('--samples', type=int, help='ensemble size')
    typical.add_argument('--method', choices=('csd', 'census'), help='sampler')
    typical.add_argument('--t', type=float, help='horizon of census runs')
    typical.set_defaults(handler=commands.cmd_typical_cell)

    validate = sub.add_parser('validate', help='acceptance suite with pass/fail exit code')
    _add_common_flags(validate)
    validate.add_argument('--suite', required=True, choices=commands.SUITES)
    validate.add_argument('--t', type=float, help='horizon of the table suites')
    validate.add_argument('--csv', help='CSV report path')
    validate.set_defaults(handler=commands.cmd_validate, handler_args=('suite',))

    zeta = sub.add_parser('zeta', help='Monte Carlo zeta constants as CSV')
    _add_common_flags(zeta)
    zeta.add_argument('-n', type=int, help='number of direction samples')
    zeta.add_argument('--isotropic', action='store_true', help='use the isotropic direction law')
    zeta.add_argument('--csv', help='CSV report path')
    zeta.set_defaults(handler=commands.cmd_zeta)

    logger.debug(f"tessellate parser ready (profile {os.getenv('TESSELLATE_ENV', 'production')})")
    return parser
