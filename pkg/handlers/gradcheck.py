import argparse
import logging

from nn.adapter import AdapterMode
from training.trainer import encoder_gradcheck

# Exit nonzero above this error
THRESHOLD = 1e-4

MODES = {"lora": AdapterMode.PARALLEL, "parallel": AdapterMode.PARALLEL, "serial": AdapterMode.SERIAL}


def run(args: argparse.Namespace) -> int:
    """Prints the worst relative gradient error; exit 1 above THRESHOLD."""
    error = encoder_gradcheck(MODES[args.mode], args.d_model, args.rank, args.eps,
                              heads=args.heads, n_blocks=args.blocks, n_tokens=args.tokens, seed=args.seed)
    print(f"max relative error: {error:.3e}")
    if error > THRESHOLD:
        logging.error(f"Gradient check failed: {error:.3e} > {THRESHOLD:g}")
        return 1
    return 0


def register(subparsers) -> None:
    p = subparsers.add_parser("gradcheck", help="Compare backward() with central differences.")
    p.add_argument("--mode", choices=tuple(MODES), required=True)
    p.add_argument("--d-model", type=int, default=16)
    p.add_argument("--heads", type=int, default=2)
    p.add_argument("--blocks", type=int, default=2)
    p.add_argument("--tokens", type=int, default=4)
    p.add_argument("--rank", type=int, default=2)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(handler=run)
