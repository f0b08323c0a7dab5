"""
CSV and run.json writers. Floats go through repr so values round-trip
exactly, rows end with "\n", and nothing depends on the locale or the clock.
"""
import csv
import json
import platform
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

HISTORY_COLUMNS = ("epoch", "train_loss", "eval_loss", "seconds", "eval_accuracy")
SUMMARY_COLUMNS = ("arm", "rank", "trainable_params", "final_eval_loss", "best_eval_loss")


def _cell(v: Any) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: Path | str, columns: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(v) for v in row])
    return path


def write_history(path: Path | str, history) -> Path:
    """history.csv from a TrainHistory."""
    return write_csv(path, HISTORY_COLUMNS, [
        (r.epoch, r.train_loss, r.eval_loss, r.seconds, r.eval_accuracy) for r in history.records
    ])


def write_run_json(path: Path | str, command: str, args: dict, **extra) -> Path:
    """Flags, seeds and library versions of one invocation."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "command": command,
        "args": {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(args.items()) if not callable(v)},
        "versions": {"python": platform.python_version(), "numpy": np.__version__},
        **extra,
    }
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")
    return path


def run_json_beside(output: Path | str) -> Path:
    """run.json path for a single-file output: report.csv -> report.run.json."""
    output = Path(output)
    return output.with_name(f"{output.stem}.run.json")
