"""
Checkpoint directories.

    model:    model.json + block{i}.{wq|wk|wv|wout}.mtx
    adapter:  adapter.json + block{i}.{slot}.{A|B}.mtx
    dataset:  dataset.json + inputs/{i}.mtx + targets/{i}.mtx | labels.csv [+ head.mtx]

Readers validate everything before returning, so a failure never yields a
partial object.
"""
import csv
import math
import logging
from pathlib import Path
from typing import Optional, Sequence, Type, TypeVar

import numpy as np
from pydantic import BaseModel, ValidationError

from nn.adapter import AdapterSet, LowRankPair, Slot
from nn.attention import Block, EncoderStack, MhaWeights
from nn.errors import CheckpointError
from storage.models import AdapterManifest, DatasetKind, DatasetManifest, ModelManifest
from storage.mtx import read_mtx, write_mtx
from training.dataset import Dataset, Split

MODEL_MANIFEST = "model.json"
ADAPTER_MANIFEST = "adapter.json"
DATASET_MANIFEST = "dataset.json"

_PROJECTIONS = ("wq", "wk", "wv", "wout")

M = TypeVar("M", bound=BaseModel)


def _read_manifest(path: Path, model: Type[M]) -> M:
    if not path.is_file():
        raise CheckpointError("manifest not found", str(path))
    try:
        return model.model_validate_json(path.read_text(encoding="utf-8"))
    except ValidationError as e:
        raise CheckpointError(f"invalid manifest: {e.errors()[0]['msg']} at {e.errors()[0]['loc']}", str(path)) from e


def _write_manifest(path: Path, manifest: BaseModel) -> None:
    path.write_text(manifest.model_dump_json(indent=2) + "\n", encoding="utf-8")


def _expect_shape(path: Path, m: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    if m.shape != shape:
        raise CheckpointError(f"shape {m.shape[0]}x{m.shape[1]} disagrees with manifest ({shape[0]}x{shape[1]})", str(path))
    return m


# --- Model ---

def save_model(stack: EncoderStack, directory: Path | str) -> Path:
    """Writes every projection of every block, then model.json."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, block in enumerate(stack.blocks):
        for name in _PROJECTIONS:
            write_mtx(directory / f"block{i}.{name}.mtx", getattr(block.weights, name))
    _write_manifest(directory / MODEL_MANIFEST,
                    ModelManifest(d_model=stack.d_model, heads=stack.heads, n_blocks=len(stack.blocks)))
    logging.info(f"Model saved: {directory} ({len(stack.blocks)} blocks, d_model={stack.d_model})")
    return directory


def load_model(directory: Path | str) -> EncoderStack:
    """Adapter-free stack; each matrix is checked against the manifest shape."""
    directory = Path(directory)
    manifest = _read_manifest(directory / MODEL_MANIFEST, ModelManifest)
    d = manifest.d_model
    blocks = []
    for i in range(manifest.n_blocks):
        mats = {}
        for name in _PROJECTIONS:
            path = directory / f"block{i}.{name}.mtx"
            mats[name] = _expect_shape(path, read_mtx(path), (d, d))
        try:
            blocks.append(Block(weights=MhaWeights(**mats, heads=manifest.heads)))
        except ValueError as e:
            raise CheckpointError(str(e), str(directory / MODEL_MANIFEST)) from e
    return EncoderStack(blocks=tuple(blocks), d_model=d)


# --- Adapters ---

def save_adapters(adapters: Sequence[AdapterSet], manifest: AdapterManifest, directory: Path | str) -> Path:
    """One A and one B file per (block, slot), then adapter.json."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, ad in enumerate(adapters):
        for slot, pair in ad.pairs().items():
            write_mtx(directory / f"block{i}.{slot}.A.mtx", pair.a)
            write_mtx(directory / f"block{i}.{slot}.B.mtx", pair.b)
    _write_manifest(directory / ADAPTER_MANIFEST, manifest)
    logging.info(f"Adapters saved: {directory} (mode={manifest.mode}, rank={manifest.rank})")
    return directory


def load_adapters(directory: Path | str) -> tuple[list[AdapterSet], AdapterManifest]:
    """
    Adapter sets in block order plus the manifest describing how they were
    initialized. Factor shapes must be d_model x rank and rank x d_model.
    """
    directory = Path(directory)
    manifest = _read_manifest(directory / ADAPTER_MANIFEST, AdapterManifest)
    d, r = manifest.d_model, manifest.rank
    slots = (Slot.SERIAL,) if manifest.mode == "serial" else Slot.PROJECTIONS
    adapters = []
    for i in range(manifest.n_blocks):
        pairs = {}
        for slot in slots:
            a_path = directory / f"block{i}.{slot}.A.mtx"
            b_path = directory / f"block{i}.{slot}.B.mtx"
            pairs[slot] = LowRankPair(
                b=_expect_shape(b_path, read_mtx(b_path), (d, r)),
                a=_expect_shape(a_path, read_mtx(a_path), (r, d)),
            )
        adapters.append(AdapterSet.from_pairs(manifest.mode, pairs))
    return adapters, manifest


# --- Dataset ---

def save_dataset(dataset: Dataset, directory: Path | str) -> Path:
    """
    Inputs and targets go under zero-padded index names; classification
    datasets write labels.csv and head.mtx instead of targets.
    """
    directory = Path(directory)
    # 1. Inputs
    (directory / "inputs").mkdir(parents=True, exist_ok=True)
    width = max(5, len(str(len(dataset.inputs))))
    for i, x in enumerate(dataset.inputs):
        write_mtx(directory / "inputs" / f"{i:0{width}d}.mtx", x)
    # 2. Labels and head, or targets
    if dataset.is_classification:
        with open(directory / "labels.csv", "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(["index", "label"])
            writer.writerows([i, y] for i, y in enumerate(dataset.labels))
        write_mtx(directory / "head.mtx", dataset.head)
    else:
        (directory / "targets").mkdir(exist_ok=True)
        for i, t in enumerate(dataset.targets):
            write_mtx(directory / "targets" / f"{i:0{width}d}.mtx", t)
    # 3. Manifest last
    _write_manifest(directory / DATASET_MANIFEST, DatasetManifest(
        d_model=dataset.d_model, n_tokens=dataset.n_tokens, kind=dataset.kind,
        n_train=dataset.n_train, n_eval=dataset.n_eval, n_classes=dataset.n_classes,
    ))
    logging.info(f"Dataset saved: {directory} ({dataset.n_train} train / {dataset.n_eval} eval, {dataset.kind})")
    return directory


def _read_labels(path: Path, count: int) -> list[int]:
    """labels.csv keyed by sample index; every index 0..count-1 must appear once."""
    if not path.is_file():
        raise CheckpointError("labels.csv not found", str(path))
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.DictReader(f))
    try:
        labels = {int(row["index"]): int(row["label"]) for row in rows}
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f"malformed row ({e})", str(path)) from e
    if sorted(labels) != list(range(count)):
        raise CheckpointError(f"expected labels for indices 0..{count - 1}", str(path))
    return [labels[i] for i in range(count)]


def _indexed_paths(directory: Path, count: int) -> list[Path]:
    """
    Sample files ordered by the integer index in their stem. Names may be
    zero-padded or not; the indices must be exactly 0..count-1.
    """
    by_index: dict[int, Path] = {}
    for path in directory.glob("*.mtx"):
        if not (path.stem.isascii() and path.stem.isdigit()):
            raise CheckpointError("file name must be a sample index", str(path))
        index = int(path.stem)
        if index in by_index:
            raise CheckpointError(f"duplicate sample index {index} (also {by_index[index].name})", str(path))
        by_index[index] = path
    if sorted(by_index) != list(range(count)):
        raise CheckpointError(f"manifest lists {count} samples, expected files for indices 0..{count - 1}, "
                              f"found {len(by_index)}", str(directory))
    return [by_index[i] for i in range(count)]


def load_dataset(directory: Path | str) -> Dataset:
    directory = Path(directory)
    manifest = _read_manifest(directory / DATASET_MANIFEST, DatasetManifest)
    shape = (manifest.d_model, manifest.n_tokens)
    count = manifest.n_train + manifest.n_eval

    # 1. Inputs, paired by index
    input_paths = _indexed_paths(directory / "inputs", count)
    inputs = [_expect_shape(p, read_mtx(p), shape) for p in input_paths]
    splits = [Split.TRAIN] * manifest.n_train + [Split.EVAL] * manifest.n_eval

    # 2. Labels and head for classification
    if manifest.kind == DatasetKind.CLASSIFICATION:
        if manifest.n_classes is None:
            raise CheckpointError("classification manifest needs n_classes", str(directory / DATASET_MANIFEST))
        head_path = directory / "head.mtx"
        head = _expect_shape(head_path, read_mtx(head_path), (manifest.n_classes, manifest.d_model))
        labels = _read_labels(directory / "labels.csv", count)
        try:
            return Dataset(kind=manifest.kind, inputs=inputs, splits=splits, labels=labels,
                           head=head, n_classes=manifest.n_classes)
        except ValueError as e:
            raise CheckpointError(str(e), str(directory)) from e

    # 3. Targets for regression, paired with the inputs by index
    target_paths = _indexed_paths(directory / "targets", count)
    targets = [_expect_shape(p, read_mtx(p), shape) for p in target_paths]
    return Dataset(kind=manifest.kind, inputs=inputs, splits=splits, targets=targets)


def adapter_manifest_for(adapters: Sequence[AdapterSet], seed: int, std: Optional[float]) -> AdapterManifest:
    first = adapters[0]
    d_model = next(iter(first.pairs().values())).d_in
    return AdapterManifest(
        mode=first.mode, d_model=d_model, rank=first.rank, n_blocks=len(adapters),
        seed=seed, std=std if std is not None else 1.0 / math.sqrt(first.rank),
    )
