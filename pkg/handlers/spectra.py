import argparse
import logging

from analysis.spectra import spectrum_report
from storage.checkpoint import load_adapters, load_model
from utils.reporting import run_json_beside, write_run_json


def run(args: argparse.Namespace) -> int:
    """Writes the singular-value CSV of a model, optionally with trained adapters attached."""
    # 1. Backbone, then adapters if given
    stack = load_model(args.model)
    if args.adapter:
        adapters, _ = load_adapters(args.adapter)
        stack = stack.with_adapters(adapters)

    # 2. Report and its run.json
    rows = spectrum_report(stack, args.slots.split(","), args.out)
    write_run_json(run_json_beside(args.out), "spectra", vars(args), spectra=len(rows))
    logging.info(f"spectra finished: {args.out}")
    return 0


def register(subparsers) -> None:
    p = subparsers.add_parser("spectra", help="Singular values of base, merged and delta projections.")
    p.add_argument("--model", required=True)
    p.add_argument("--adapter")
    p.add_argument("--slots", default="q,k,v")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=run)
