import argparse
import logging
from pathlib import Path

from storage.checkpoint import adapter_manifest_for, load_model, save_adapters
from training.tasks import few_shot, few_shot_per_class, load_dataset
from training.trainer import ARMS, TrainConfig, initial_adapters, train
from utils.reporting import write_history, write_run_json


def build_config(args: argparse.Namespace, rank: int | None = None, arm: str | None = None) -> TrainConfig:
    return TrainConfig.for_arm(
        arm or args.mode,
        optimizer=args.optimizer,
        base_lr=args.lr,
        ab_ratio=args.ab_ratio,
        epochs=args.epochs,
        batch=args.batch,
        full_batch=args.full_batch,
        seed=args.seed,
        rank=rank if rank is not None else args.rank,
        init_std=args.init_std,
    )


def add_training_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", required=True, help="Dataset directory written by gen-data.")
    p.add_argument("--model", help="Base model directory (default: DATA/model).")
    p.add_argument("--lr", type=float, default=1e-2, help="Learning rate of the A factors.")
    p.add_argument("--ab-ratio", type=float, default=None,
                   help="lr(B) / lr(A); defaults to 20 for lora+/serial+ and 1 otherwise.")
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--full-batch", action="store_true")
    p.add_argument("--optimizer", choices=("adam", "sgd"), default="adam")
    p.add_argument("--init-std", type=float, default=None)
    shots = p.add_mutually_exclusive_group()
    shots.add_argument("--shot", type=float, default=1.0, help="Fraction of the train split to keep.")
    shots.add_argument("--shot-per-class", type=int, default=None, metavar="K",
                       help="Keep K train samples of every class (classification only).")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)


def load_inputs(args: argparse.Namespace):
    """Dataset (after any shot subsampling) and the base stack it trains on."""
    dataset = load_dataset(args.data)
    if args.shot_per_class is not None:
        dataset = few_shot_per_class(dataset, args.shot_per_class, args.seed)
    elif args.shot != 1.0:
        dataset = few_shot(dataset, args.shot, args.seed)
    stack = load_model(args.model or Path(args.data) / "model")
    return stack, dataset


def run(args: argparse.Namespace) -> int:
    """
    One fine-tuning run. OUT receives init_adapter/, adapter/, history.csv
    and run.json.
    """
    out = Path(args.out)
    # 1. Config and inputs
    cfg = build_config(args)
    stack, dataset = load_inputs(args)

    # 2. Initial adapters are saved before training touches them
    init = initial_adapters(stack, cfg)
    save_adapters(init, adapter_manifest_for(init, cfg.seed, cfg.init_std), out / "init_adapter")
    # 3. Train and save the final factors
    history = train(stack, dataset, cfg)
    save_adapters(history.adapters, adapter_manifest_for(history.adapters, cfg.seed, cfg.init_std), out / "adapter")
    history.checkpoint = str(out / "adapter")

    # 4. Reports
    write_history(out / "history.csv", history)
    write_run_json(out / "run.json", "train", vars(args),
                   config=cfg.model_dump(), trainable_params=history.trainable_params)
    logging.info(f"train finished: {cfg.arm} r={cfg.rank}, final eval loss {history.final_eval_loss:.6g}")
    return 0


def register(subparsers) -> None:
    p = subparsers.add_parser("train", help="Fine-tune adapters on a frozen base model.")
    p.add_argument("--mode", choices=tuple(ARMS), required=True)
    p.add_argument("--rank", type=int, default=2)
    add_training_flags(p)
    p.set_defaults(handler=run)
