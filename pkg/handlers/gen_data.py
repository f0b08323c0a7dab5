import argparse
import logging
from pathlib import Path

from nn.adapter import AdapterMode
from nn.attention import random_stack
from storage.checkpoint import save_dataset, save_model
from training.tasks import DEFAULT_EVAL, DEFAULT_TRAIN, TEACHER_B_STD, gen_classification, gen_teacher_student
from utils.reporting import write_run_json

TASKS = ("teacher-serial", "teacher-parallel", "classify")


def run(args: argparse.Namespace) -> int:
    """Writes the dataset to OUT and the frozen base stack to OUT/model."""
    out = Path(args.out)
    # 1. Build the task
    if args.task == "classify":
        dataset = gen_classification(args.d_model, args.tokens, args.classes, args.samples,
                                     seed=args.seed, n_eval=args.eval_samples)
        base = random_stack(args.d_model, args.heads, args.blocks, args.seed)
    else:
        mode = AdapterMode.SERIAL if args.task == "teacher-serial" else AdapterMode.PARALLEL
        base, dataset = gen_teacher_student(args.d_model, args.heads, args.blocks, args.tokens,
                                            mode, args.rank, args.samples,
                                            seed=args.seed, n_eval=args.eval_samples,
                                            teacher_b_std=args.teacher_b_std)

    # 2. Persist dataset, backbone and run.json
    save_dataset(dataset, out)
    save_model(base, out / "model")
    write_run_json(out / "run.json", "gen-data", vars(args))
    logging.info(f"gen-data finished: {out}")
    return 0


def register(subparsers) -> None:
    p = subparsers.add_parser("gen-data", help="Generate a synthetic fine-tuning task.")
    p.add_argument("--task", choices=TASKS, required=True)
    p.add_argument("--d-model", type=int, default=16)
    p.add_argument("--heads", type=int, default=2)
    p.add_argument("--rank", type=int, default=2, help="Teacher adapter rank.")
    p.add_argument("--teacher-b-std", type=float, default=TEACHER_B_STD,
                   help="Std of the teacher B factors (the A factors use 1/sqrt(rank)).")
    p.add_argument("--blocks", type=int, default=2)
    p.add_argument("--tokens", type=int, default=4)
    p.add_argument("--samples", type=int, default=DEFAULT_TRAIN, help="Training samples.")
    p.add_argument("--eval-samples", type=int, default=DEFAULT_EVAL)
    p.add_argument("--classes", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=run)
