import argparse
import logging
import sys
from typing import Optional, Sequence

from config import CONFIG
from nn.errors import SloraError

from handlers import gen_data, gradcheck, merge, params, spectra, sweep, train

# Logging setup
logging.basicConfig(level=CONFIG.LOG_LEVEL, stream=sys.stdout)

# --- SUBCOMMANDS ---
# Registration order is the order `--help` lists them in.
HANDLERS = (gen_data, train, gradcheck, spectra, params, merge, sweep)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="slora",
        description="LoRA and Serial LoRA fine-tuning of small attention encoders.",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    for module in HANDLERS:
        module.register(subparsers)
    return parser


def cli_dispatch(argv: Optional[Sequence[str]] = None) -> int:
    """
    Runs one subcommand and maps the outcome to an exit code:
    0 success, 1 numeric, validation or I/O failure, 2 usage error.
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code in (0, None) else 2
    try:
        return args.handler(args)
    except (SloraError, ValueError, OSError) as e:
        logging.error(f"{args.command} failed: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(cli_dispatch())
