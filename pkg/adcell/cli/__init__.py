"""
CLI Package Initialization
"""

import argparse

from adcell import __version__

# Import and register command modules
from adcell.cli import experiments, instances, solve


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="adcell",
        description="Exact LP, rounding, online allocation and oracles for budgeted and capacitated ad allocation.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subparsers = parser.add_subparsers(dest="command", required=True)

    instances.register(subparsers)
    solve.register(subparsers)
    experiments.register(subparsers)
    return parser
