import argparse

from analysis.params import load_specs, param_report
from utils.reporting import run_json_beside, write_run_json


def run(args: argparse.Namespace) -> int:
    """Parallel vs serial counts for every model in the JSON spec."""
    rows = param_report(load_specs(args.spec), args.out)
    write_run_json(run_json_beside(args.out), "params", vars(args), models=len(rows))
    return 0


def register(subparsers) -> None:
    p = subparsers.add_parser("params", help="Parallel vs serial trainable-parameter table.")
    p.add_argument("--spec", required=True, help="JSON list of model specs.")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=run)
