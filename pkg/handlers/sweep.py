import argparse
import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from config import CONFIG
from handlers.train import add_training_flags, build_config, load_inputs
from training.trainer import ARMS, TrainHistory, train
from utils.reporting import SUMMARY_COLUMNS, write_csv, write_history, write_run_json


def csv_list(kind):
    def parse(value: str) -> list:
        try:
            return [kind(v) for v in value.split(",") if v.strip()]
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected a comma-separated list, got {value!r}")
    return parse


def run(args: argparse.Namespace) -> int:
    """
    Trains every (arm, rank) pair on one dataset. Each run's history.csv is
    written as soon as that run finishes; summary.csv and run.json come last.
    """
    out = Path(args.out)
    # 1. Validate the grid before any training starts
    unknown = [a for a in args.arms if a not in ARMS]
    if unknown:
        raise ValueError(f"unknown arm {unknown[0]!r}; expected one of {sorted(ARMS)}")
    if not args.ranks or min(args.ranks) < 1:
        raise ValueError(f"ranks must be positive, got {args.ranks}")
    stack, dataset = load_inputs(args)
    too_large = [r for r in args.ranks if r > stack.d_model]
    if too_large:
        raise ValueError(f"rank {max(too_large)} exceeds d_model={stack.d_model}; "
                         f"pass --ranks up to {stack.d_model} or regenerate the data with a larger --d-model")

    # 2. Train, persisting each history on completion
    runs = [(arm, rank) for arm in args.arms for rank in args.ranks]
    logging.info(f"Sweep: {len(runs)} runs ({', '.join(args.arms)} x ranks {args.ranks})")

    def one(job) -> TrainHistory:
        arm, rank = job
        history = train(stack, dataset, build_config(args, rank=rank, arm=arm))
        write_history(out / f"{arm}_r{rank}" / "history.csv", history)
        return history

    if CONFIG.THREADS > 1:
        with ThreadPoolExecutor(max_workers=CONFIG.THREADS) as pool:
            histories = list(pool.map(one, runs))
    else:
        histories = [one(job) for job in runs]

    # 3. Summary in grid order
    summary = [
        (arm, rank, h.trainable_params, h.final_eval_loss, h.best_eval_loss)
        for (arm, rank), h in zip(runs, histories)
    ]
    write_csv(out / "summary.csv", SUMMARY_COLUMNS, summary)
    write_run_json(out / "run.json", "sweep", vars(args))
    return 0


def register(subparsers) -> None:
    p = subparsers.add_parser("sweep", help="Train every arm at every rank and summarize.")
    p.add_argument("--arms", type=csv_list(str), default=["lora", "serial"])
    p.add_argument("--ranks", type=csv_list(int), default=[8, 16, 32, 64])
    add_training_flags(p)
    p.set_defaults(handler=run)
