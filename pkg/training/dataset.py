from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from nn.errors import ShapeError
from storage.models import DatasetKind


class Split:
    TRAIN = "train"
    EVAL = "eval"


@dataclass(frozen=True, eq=False)
class Dataset:
    """
    Token matrices (d_model x n_tokens) with regression targets or class labels.
    Samples are stored train split first, then eval.
    """
    kind: str
    inputs: tuple[np.ndarray, ...]
    splits: tuple[str, ...]
    targets: tuple[np.ndarray, ...] = ()
    labels: tuple[int, ...] = ()
    # Frozen readout (n_classes x d_model) applied to mean-pooled outputs
    head: Optional[np.ndarray] = None
    n_classes: Optional[int] = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        for name in ("inputs", "splits", "targets", "labels"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        n = len(self.inputs)
        if len(self.splits) != n:
            raise ValueError(f"{len(self.splits)} split tags for {n} samples")
        order = [0 if s == Split.TRAIN else 1 if s == Split.EVAL else 2 for s in self.splits]
        if 2 in order or order != sorted(order):
            raise ValueError("split tags must be 'train' samples followed by 'eval' samples")
        shapes = {x.shape for x in self.inputs}
        if len(shapes) > 1:
            raise ShapeError(f"inputs disagree on shape: {sorted(shapes)}")
        if self.kind == DatasetKind.REGRESSION:
            if len(self.targets) != n:
                raise ValueError(f"{len(self.targets)} targets for {n} samples")
            bad = [i for i, t in enumerate(self.targets) if t.shape != self.inputs[i].shape]
            if bad:
                raise ShapeError(f"target {bad[0]} has shape {self.targets[bad[0]].shape}, input is {self.inputs[bad[0]].shape}")
        elif self.kind == DatasetKind.CLASSIFICATION:
            if len(self.labels) != n:
                raise ValueError(f"{len(self.labels)} labels for {n} samples")
            if self.head is None or self.n_classes is None:
                raise ValueError("classification datasets need a readout head and n_classes")
            if self.head.shape != (self.n_classes, self.d_model):
                raise ShapeError(f"head is {self.head.shape}, expected ({self.n_classes}, {self.d_model})")
            if any(not 0 <= y < self.n_classes for y in self.labels):
                raise ValueError(f"labels must lie in [0, {self.n_classes})")
        else:
            raise ValueError(f"unknown dataset kind {self.kind!r}")

    @property
    def d_model(self) -> int:
        return self.inputs[0].shape[0] if self.inputs else 0

    @property
    def n_tokens(self) -> int:
        return self.inputs[0].shape[1] if self.inputs else 0

    @property
    def is_classification(self) -> bool:
        return self.kind == DatasetKind.CLASSIFICATION

    def indices(self, split: str) -> list[int]:
        return [i for i, s in enumerate(self.splits) if s == split]

    @property
    def n_train(self) -> int:
        return len(self.indices(Split.TRAIN))

    @property
    def n_eval(self) -> int:
        return len(self.indices(Split.EVAL))

    def select(self, indices: Sequence[int]) -> "Dataset":
        """Samples at `indices`, kept in stored order."""
        keep = sorted(set(indices))
        return Dataset(
            kind=self.kind,
            inputs=[self.inputs[i] for i in keep],
            splits=[self.splits[i] for i in keep],
            targets=[self.targets[i] for i in keep] if self.targets else (),
            labels=[self.labels[i] for i in keep] if self.labels else (),
            head=self.head,
            n_classes=self.n_classes,
            meta=dict(self.meta),
        )
