"""
Synthetic fine-tuning tasks whose optimum is known by construction.

Teacher-student: a frozen random base stack plus a nonzero adapter forms the
teacher; its outputs are the regression targets and the bare base is handed
to the student. Classification: Gaussian clusters in token space scored by a
frozen prototype head on mean-pooled encoder outputs.
"""
import logging
import math
from pathlib import Path
from typing import Optional

import numpy as np

from nn.adapter import AdapterMode, AdapterSet, LowRankPair, init_adapter, slot_seed
from nn.attention import EncoderStack, encoder_forward, random_stack
from nn.linalg import gaussian_matrix
from storage import checkpoint
from storage.models import DatasetKind
from training.dataset import Dataset, Split
from utils.seeds import stream_seed

DEFAULT_TRAIN = 256
DEFAULT_EVAL = 64
# Std of the teacher B factors; the teacher A factors keep the init_adapter draw
TEACHER_B_STD = 0.1


def _splits(n_train: int, n_eval: int) -> list[str]:
    return [Split.TRAIN] * n_train + [Split.EVAL] * n_eval


def teacher_adapters(mode: str, d_model: int, rank: int, n_blocks: int, seed: int,
                     b_std: Optional[float] = None) -> list[AdapterSet]:
    """
    init_adapter factors (A ~ N(0, 1/sqrt(rank))) with B redrawn from
    N(0, b_std^2), so the teacher differs from the base from the start.
    b_std defaults to TEACHER_B_STD.
    """
    b_std = TEACHER_B_STD if b_std is None else b_std
    result = []
    for i in range(n_blocks):
        fresh = init_adapter(mode, d_model, rank, seed=seed, block=i)
        pairs = {
            slot: LowRankPair(
                b=gaussian_matrix(d_model, rank, b_std, stream_seed(slot_seed(seed, slot, i), "teacher-b")),
                a=pair.a,
            )
            for slot, pair in fresh.pairs().items()
        }
        result.append(AdapterSet.from_pairs(mode, pairs))
    return result


def gen_teacher_student(d_model: int, heads: int, n_blocks: int, n_tokens: int,
                        teacher_mode: str, teacher_rank: int, n_samples: int = DEFAULT_TRAIN,
                        seed: int = 0, n_eval: int = DEFAULT_EVAL,
                        teacher_b_std: Optional[float] = None) -> tuple[EncoderStack, Dataset]:
    """
    Returns the adapter-free base stack and a regression dataset whose targets
    are the teacher's outputs on Gaussian token matrices.
    """
    if teacher_mode not in AdapterMode.ALL:
        raise ValueError(f"unknown teacher mode {teacher_mode!r}")
    if not 1 <= teacher_rank <= d_model:
        raise ValueError(f"teacher rank must lie in [1, {d_model}], got {teacher_rank}")

    base = random_stack(d_model, heads, n_blocks, seed, n_tokens=n_tokens)
    teacher = base.with_adapters(
        teacher_adapters(teacher_mode, d_model, teacher_rank, n_blocks, seed, teacher_b_std)
    )
    total = n_samples + n_eval
    inputs = [gaussian_matrix(d_model, n_tokens, 1.0, stream_seed(seed, "inputs", i)) for i in range(total)]
    targets = [encoder_forward(x, teacher) for x in inputs]
    dataset = Dataset(
        kind=DatasetKind.REGRESSION,
        inputs=inputs,
        splits=_splits(n_samples, n_eval),
        targets=targets,
        meta={"task": f"teacher-{teacher_mode}", "teacher_rank": teacher_rank, "seed": seed},
    )
    logging.info(f"Teacher-student task: {teacher_mode} rank {teacher_rank}, "
                 f"d_model={d_model}, {n_blocks} blocks, {n_samples}+{n_eval} samples")
    return base, dataset


def gen_classification(d_model: int, n_tokens: int, n_classes: int, n_samples: int = DEFAULT_TRAIN,
                       seed: int = 0, n_eval: int = DEFAULT_EVAL,
                       separation: float = 10.0, noise: float = 1.0) -> Dataset:
    """
    Balanced Gaussian clusters: sample i belongs to class i % n_classes and its
    tokens are center + N(0, noise^2). Centers have norm separation * noise / sqrt(2),
    so distinct centers sit about `separation` noise units apart. The centers
    double as the frozen readout head scoring mean-pooled tokens.
    """
    if n_classes < 2:
        raise ValueError(f"need at least 2 classes, got {n_classes}")
    raw = gaussian_matrix(n_classes, d_model, 1.0, stream_seed(seed, "centers"))
    centers = raw / np.linalg.norm(raw, axis=1, keepdims=True) * (separation * noise / math.sqrt(2.0))

    total = n_samples + n_eval
    labels = [i % n_classes for i in range(total)]
    inputs = []
    for i, y in enumerate(labels):
        eps = gaussian_matrix(d_model, n_tokens, noise, stream_seed(seed, "tokens", i))
        inputs.append(centers[y][:, None] + eps)
    logging.info(f"Classification task: {n_classes} classes, d_model={d_model}, {n_samples}+{n_eval} samples")
    return Dataset(
        kind=DatasetKind.CLASSIFICATION,
        inputs=inputs,
        splits=_splits(n_samples, n_eval),
        labels=labels,
        head=centers,
        n_classes=n_classes,
        meta={"task": "classify", "seed": seed},
    )


def few_shot(dataset: Dataset, fraction: float, seed: int = 0) -> Dataset:
    """Keep a seeded `fraction` of the train split (at least one sample); eval is untouched."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"shot fraction must lie in (0, 1], got {fraction}")
    train = dataset.indices(Split.TRAIN)
    if fraction == 1.0 or not train:
        return dataset
    keep = max(1, int(round(fraction * len(train))))
    rng = np.random.Generator(np.random.PCG64(stream_seed(seed, "shot")))
    chosen = sorted(rng.choice(train, size=keep, replace=False).tolist())
    return dataset.select(chosen + dataset.indices(Split.EVAL))


def few_shot_per_class(dataset: Dataset, k: int, seed: int = 0) -> Dataset:
    """
    k-shot split: a seeded choice of k train samples from every class (all of
    them when a class has fewer). Eval is untouched.
    """
    if not dataset.is_classification:
        raise ValueError("per-class shots need a classification dataset")
    if k < 1:
        raise ValueError(f"shots per class must be at least 1, got {k}")
    train = dataset.indices(Split.TRAIN)
    chosen = []
    for c in range(dataset.n_classes):
        members = [i for i in train if dataset.labels[i] == c]
        if not members:
            raise ValueError(f"class {c} has no training samples")
        if len(members) < k:
            logging.warning(f"class {c} has only {len(members)} training samples, keeping all of them")
            chosen.extend(members)
            continue
        rng = np.random.Generator(np.random.PCG64(stream_seed(seed, "shot-class", c)))
        chosen.extend(rng.choice(members, size=k, replace=False).tolist())
    return dataset.select(sorted(chosen) + dataset.indices(Split.EVAL))


def load_dataset(path: Path | str) -> Dataset:
    return checkpoint.load_dataset(path)
