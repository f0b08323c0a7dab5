import argparse
import logging

from nn.attention import EncoderStack, encoder_forward, merge_stack
from nn.errors import SloraError
from nn.linalg import gaussian_matrix, relative_error
from storage.checkpoint import load_adapters, load_model, save_model
from utils.reporting import write_run_json
from utils.seeds import stream_seed

TOLERANCE = 1e-10


def verify_merge(adapted: EncoderStack, folded: EncoderStack, probes: int, n_tokens: int, seed: int) -> float:
    """Worst relative disagreement between the adapted and folded forwards on random probes."""
    worst = 0.0
    for i in range(probes):
        x = gaussian_matrix(adapted.d_model, n_tokens, 1.0, stream_seed(seed, "merge-probe", i))
        worst = max(worst, relative_error(encoder_forward(x, folded), encoder_forward(x, adapted)))
    return worst


def run(args: argparse.Namespace) -> int:
    """
    Folds the adapters into the backbone and writes the result only after the
    folded and adapted forwards agree on random probes.
    """
    # 1. Adapted stack and its folded twin
    adapters, _ = load_adapters(args.adapter)
    adapted = load_model(args.model).with_adapters(adapters)
    folded = merge_stack(adapted)

    # 2. Equivalence gate
    error = verify_merge(adapted, folded, args.probes, args.tokens, args.seed)
    if error > TOLERANCE:
        raise SloraError(f"folded model disagrees with the adapted one: relative error {error:.3e}")

    # 3. Folded checkpoint plus run.json
    out = save_model(folded, args.out)
    write_run_json(out / "run.json", "merge", vars(args), relative_error=error, tolerance=TOLERANCE)
    logging.info(f"merge finished: relative error {error:.3e} on {args.probes} probes")
    return 0


def register(subparsers) -> None:
    p = subparsers.add_parser("merge", help="Fold adapters into the frozen weights.")
    p.add_argument("--model", required=True)
    p.add_argument("--adapter", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--probes", type=int, default=4)
    p.add_argument("--tokens", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(handler=run)
