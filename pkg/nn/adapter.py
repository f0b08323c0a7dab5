"""
LoRA and Serial LoRA factor pairs.

A pair (B, A) stands for dW = B @ A. Parallel mode attaches one pair to each
attention projection (q, k, v, out); serial mode shares a single square pair
that transforms the block input as (I + B A) x before the q/k/v projections.
"""
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional

import numpy as np

from config import CONFIG
from nn.errors import ShapeError
from nn.linalg import as_matrix, gaussian_matrix


class AdapterMode:
    PARALLEL = "parallel"
    SERIAL = "serial"

    ALL = (PARALLEL, SERIAL)


class Slot:
    Q = "q"
    K = "k"
    V = "v"
    OUT = "out"
    SERIAL = "serial"

    PROJECTIONS = (Q, K, V, OUT)
    # Offsets added to the base seed; each block shifts them by 16
    SEED_OFFSETS = {Q: 1, K: 2, V: 3, OUT: 4, SERIAL: 5}


def scaling(rank: int) -> float:
    """alpha / r when SLORA_LORA_ALPHA is set, otherwise exactly 1."""
    if CONFIG.LORA_ALPHA is None:
        return 1.0
    return CONFIG.LORA_ALPHA / rank


def slot_seed(seed: int, slot: str, block: int = 0) -> int:
    return seed + 16 * block + Slot.SEED_OFFSETS[slot]


@dataclass(frozen=True)
class LowRankPair:
    b: np.ndarray  # d_out x r
    a: np.ndarray  # r x d_in

    def __post_init__(self):
        b = as_matrix(self.b, "B")
        a = as_matrix(self.a, "A")
        if b.shape[1] != a.shape[0]:
            raise ShapeError(f"B is {b.shape[0]}x{b.shape[1]} but A is {a.shape[0]}x{a.shape[1]}")
        if a.shape[0] > min(b.shape[0], a.shape[1]):
            raise ShapeError(f"rank {a.shape[0]} exceeds min(d_out, d_in) = {min(b.shape[0], a.shape[1])}")
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "a", a)

    @property
    def rank(self) -> int:
        return self.a.shape[0]

    @property
    def d_out(self) -> int:
        return self.b.shape[0]

    @property
    def d_in(self) -> int:
        return self.a.shape[1]

    @property
    def n_params(self) -> int:
        return self.b.size + self.a.size


@dataclass(frozen=True)
class AdapterSet:
    mode: str
    parallel: Mapping[str, LowRankPair] = field(default_factory=dict)
    serial: Optional[LowRankPair] = None

    def __post_init__(self):
        if self.mode == AdapterMode.PARALLEL:
            if self.serial is not None or set(self.parallel) != set(Slot.PROJECTIONS):
                raise ValueError("parallel adapters need exactly the q, k, v, out slots and no serial pair")
        elif self.mode == AdapterMode.SERIAL:
            if self.serial is None or self.parallel:
                raise ValueError("serial adapters need exactly one shared pair and no per-projection pairs")
            if self.serial.d_in != self.serial.d_out:
                raise ShapeError(f"serial pair must be square, got {self.serial.d_out}x{self.serial.d_in}")
        else:
            raise ValueError(f"unknown adapter mode {self.mode!r}")

    def pairs(self) -> dict[str, LowRankPair]:
        """Slot name -> pair, in a fixed order."""
        if self.mode == AdapterMode.SERIAL:
            return {Slot.SERIAL: self.serial}
        return {slot: self.parallel[slot] for slot in Slot.PROJECTIONS}

    @property
    def rank(self) -> int:
        return next(iter(self.pairs().values())).rank

    @property
    def n_params(self) -> int:
        return sum(p.n_params for p in self.pairs().values())

    @classmethod
    def from_pairs(cls, mode: str, pairs: Mapping[str, LowRankPair]) -> "AdapterSet":
        if mode == AdapterMode.SERIAL:
            return cls(mode=mode, serial=pairs[Slot.SERIAL])
        return cls(mode=mode, parallel=dict(pairs))


def init_adapter(mode: str, d_model: int, r: int, std: Optional[float] = None,
                 seed: int = 0, block: int = 0) -> AdapterSet:
    """
    Fresh adapters: Gaussian A (std defaults to 1/sqrt(r)), all-zero B.
    Slot seeds are seed + 16 * block + {q:1, k:2, v:3, out:4, serial:5}.
    """
    if r < 1 or r > d_model:
        raise ValueError(f"rank must lie in [1, d_model={d_model}], got {r}")
    std = 1.0 / math.sqrt(r) if std is None else std

    def fresh(slot: str) -> LowRankPair:
        return LowRankPair(
            b=np.zeros((d_model, r)),
            a=gaussian_matrix(r, d_model, std, slot_seed(seed, slot, block)),
        )

    if mode == AdapterMode.SERIAL:
        return AdapterSet(mode=mode, serial=fresh(Slot.SERIAL))
    if mode == AdapterMode.PARALLEL:
        return AdapterSet(mode=mode, parallel={slot: fresh(slot) for slot in Slot.PROJECTIONS})
    raise ValueError(f"unknown adapter mode {mode!r}")


def lora_delta(p: LowRankPair) -> np.ndarray:
    delta = p.b @ p.a
    scale = scaling(p.rank)
    return delta if scale == 1.0 else delta * scale


def serial_transform(x: np.ndarray, p: LowRankPair) -> np.ndarray:
    """(I + B A) x without forming I: x + B (A x)."""
    x = as_matrix(x, "x")
    if x.shape[0] != p.d_in or p.d_in != p.d_out:
        raise ShapeError(f"serial pair {p.d_out}x{p.d_in} cannot transform {x.shape[0]}x{x.shape[1]} input")
    correction = p.b @ (p.a @ x)
    scale = scaling(p.rank)
    return x + (correction if scale == 1.0 else correction * scale)


def merge_parallel(w: np.ndarray, p: LowRankPair) -> np.ndarray:
    w = as_matrix(w, "W")
    if w.shape != (p.d_out, p.d_in):
        raise ShapeError(f"W is {w.shape[0]}x{w.shape[1]} but B A is {p.d_out}x{p.d_in}")
    return w + lora_delta(p)


def merge_serial(w: np.ndarray, p: LowRankPair) -> np.ndarray:
    """W (I + B A) = W + (W B) A."""
    w = as_matrix(w, "W")
    if w.shape[1] != p.d_out or p.d_in != p.d_out:
        raise ShapeError(f"W is {w.shape[0]}x{w.shape[1]} but the serial pair is {p.d_out}x{p.d_in}")
    composite = (w @ p.b) @ p.a
    scale = scaling(p.rank)
    return w + (composite if scale == 1.0 else composite * scale)


def param_count(d_model: int, r: int, n_blocks: int, mode: str,
                adapted_slots: Iterable[str] = Slot.PROJECTIONS,
                slot_dims: Optional[Mapping[str, tuple[int, int]]] = None) -> int:
    """
    Trainable adapter parameters.

    Parallel: n_blocks * sum over slots of r * (d_in + d_out); slot dims default
    to d_model x d_model. Serial: n_blocks * r * 2 * d_model.
    """
    if mode == AdapterMode.SERIAL:
        return n_blocks * r * 2 * d_model
    if mode != AdapterMode.PARALLEL:
        raise ValueError(f"unknown adapter mode {mode!r}")
    slots = list(adapted_slots)
    if not slots:
        raise ValueError("parallel parameter count needs at least one adapted slot")
    dims = slot_dims or {}
    total = 0
    for slot in slots:
        d_out, d_in = dims.get(slot, (d_model, d_model))
        total += r * (d_in + d_out)
    return n_blocks * total
