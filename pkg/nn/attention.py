"""
Multi-head self-attention with optional LoRA / Serial LoRA adapters, and a
residual encoder stack built from it.

Layout is column-per-token: x is d_model x n, so a projection reads W @ x.
No biases, no layer norm, no MLP.
"""
import math
from dataclasses import dataclass, field, replace
from typing import Any, Optional, Sequence

import numpy as np

from nn.adapter import AdapterMode, AdapterSet, Slot, merge_parallel, merge_serial, scaling
from nn.autograd import EAGER, EagerOps
from nn.errors import ShapeError
from nn.linalg import as_matrix, frozen, gaussian_matrix
from utils.seeds import stream_seed


@dataclass(frozen=True)
class MhaWeights:
    """Frozen attention projections; arrays are stored read-only."""
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wout: np.ndarray
    heads: int

    def __post_init__(self):
        d = None
        for name in ("wq", "wk", "wv", "wout"):
            w = as_matrix(getattr(self, name), name)
            if w.shape[0] != w.shape[1] or (d is not None and w.shape[0] != d):
                raise ShapeError(f"{name} must be d_model x d_model, got {w.shape}")
            d = w.shape[0]
            object.__setattr__(self, name, frozen(w))
        if self.heads < 1 or d % self.heads:
            raise ShapeError(f"d_model={d} is not divisible by heads={self.heads}")

    @property
    def d_model(self) -> int:
        return self.wq.shape[0]

    def projection(self, slot: str) -> np.ndarray:
        return {Slot.Q: self.wq, Slot.K: self.wk, Slot.V: self.wv, Slot.OUT: self.wout}[slot]


@dataclass(frozen=True)
class Block:
    weights: MhaWeights
    adapters: Optional[AdapterSet] = None


@dataclass(frozen=True)
class EncoderStack:
    blocks: tuple[Block, ...]
    d_model: int
    n_tokens: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))
        modes = {b.adapters.mode if b.adapters is not None else None for b in self.blocks}
        if len(modes) > 1:
            raise ValueError(f"every block must use the same adapter mode, got {sorted(map(str, modes))}")
        for i, block in enumerate(self.blocks):
            if block.weights.d_model != self.d_model:
                raise ShapeError(f"block {i} has d_model={block.weights.d_model}, stack expects {self.d_model}")

    @property
    def mode(self) -> Optional[str]:
        return self.blocks[0].adapters.mode if self.blocks and self.blocks[0].adapters else None

    @property
    def heads(self) -> int:
        return self.blocks[0].weights.heads if self.blocks else 1

    def with_adapters(self, adapters: Sequence[Optional[AdapterSet]]) -> "EncoderStack":
        if len(adapters) != len(self.blocks):
            raise ValueError(f"{len(adapters)} adapter sets for {len(self.blocks)} blocks")
        return replace(self, blocks=tuple(replace(b, adapters=a) for b, a in zip(self.blocks, adapters)))

    def without_adapters(self) -> "EncoderStack":
        return self.with_adapters([None] * len(self.blocks))


@dataclass
class BlockTensors:
    """
    One block's operands for the shared forward: arrays for eager runs,
    tape nodes for differentiated runs. `factors` maps slot -> (B, A).
    """
    wq: Any
    wk: Any
    wv: Any
    wout: Any
    heads: int
    mode: Optional[str] = None
    factors: dict[str, tuple[Any, Any]] = field(default_factory=dict)
    scale: float = 1.0


def block_tensors(weights: MhaWeights, adapters: Optional[AdapterSet]) -> BlockTensors:
    factors = {}
    if adapters is not None:
        factors = {slot: (p.b, p.a) for slot, p in adapters.pairs().items()}
    return BlockTensors(
        wq=weights.wq, wk=weights.wk, wv=weights.wv, wout=weights.wout,
        heads=weights.heads,
        mode=adapters.mode if adapters is not None else None,
        factors=factors,
        scale=scaling(adapters.rank) if adapters is not None else 1.0,
    )


# --- Shared forward (eager arrays or tape nodes) ---

def _adapted(ops, w, bt: BlockTensors, slot: str):
    if bt.mode != AdapterMode.PARALLEL:
        return w
    b, a = bt.factors[slot]
    delta = ops.matmul(b, a)
    if bt.scale != 1.0:
        delta = ops.scale(delta, bt.scale)
    return ops.add(w, delta)


def attend(ops, x, bt: BlockTensors):
    """MHA forward for one block, written against the EagerOps/Tape interface."""
    d_model = x.shape[0]
    if bt.wq.shape[0] != d_model:
        raise ShapeError(f"input has {d_model} features, block expects {bt.wq.shape[0]}")
    if d_model % bt.heads:
        raise ShapeError(f"d_model={d_model} is not divisible by heads={bt.heads}")
    d_head = d_model // bt.heads

    x_in = x
    if bt.mode == AdapterMode.SERIAL:
        b, a = bt.factors[Slot.SERIAL]
        x_in = ops.serial_transform(x, b, a, bt.scale)

    q = ops.matmul(_adapted(ops, bt.wq, bt, Slot.Q), x_in)
    k = ops.matmul(_adapted(ops, bt.wk, bt, Slot.K), x_in)
    v = ops.matmul(_adapted(ops, bt.wv, bt, Slot.V), x_in)

    inv_sqrt = 1.0 / math.sqrt(d_head)
    heads = []
    for h in range(bt.heads):
        lo, hi = h * d_head, (h + 1) * d_head
        qh, kh, vh = ops.rows(q, lo, hi), ops.rows(k, lo, hi), ops.rows(v, lo, hi)
        # scores[t, s]: query token t against key token s
        scores = ops.scale(ops.matmul(ops.transpose(qh), kh), inv_sqrt)
        attn = ops.softmax_rows(scores)
        heads.append(ops.matmul(vh, ops.transpose(attn)))
    concat = heads[0] if len(heads) == 1 else ops.concat_rows(heads)
    # Serial mode leaves the output projection unadapted
    return ops.matmul(_adapted(ops, bt.wout, bt, Slot.OUT), concat)


def encode(ops, x, blocks: Sequence[BlockTensors]):
    for bt in blocks:
        x = ops.residual(x, attend(ops, x, bt))
    return x


# --- Public eager API ---

def softmax_rows(m: np.ndarray) -> np.ndarray:
    return EagerOps.softmax_rows(as_matrix(m))


def mha_forward(x: np.ndarray, w: MhaWeights, ad: Optional[AdapterSet] = None) -> np.ndarray:
    x = as_matrix(x, "x")
    if x.shape[0] != w.d_model:
        raise ShapeError(f"input has {x.shape[0]} features, weights expect {w.d_model}")
    return attend(EAGER, x, block_tensors(w, ad))


def encoder_forward(x: np.ndarray, stack: EncoderStack) -> np.ndarray:
    x = as_matrix(x, "x")
    if x.shape[0] != stack.d_model:
        raise ShapeError(f"input has {x.shape[0]} features, stack expects {stack.d_model}")
    if stack.n_tokens is not None and x.shape[1] != stack.n_tokens:
        raise ShapeError(f"input has {x.shape[1]} tokens, stack expects {stack.n_tokens}")
    return encode(EAGER, x, [block_tensors(b.weights, b.adapters) for b in stack.blocks])


def merge_block(block: Block) -> Block:
    """Fold a block's adapters into its projections; the result has no adapters."""
    ad, w = block.adapters, block.weights
    if ad is None:
        return block
    if ad.mode == AdapterMode.SERIAL:
        merged = {slot: merge_serial(w.projection(slot), ad.serial) for slot in (Slot.Q, Slot.K, Slot.V)}
        merged[Slot.OUT] = w.wout
    else:
        merged = {slot: merge_parallel(w.projection(slot), ad.parallel[slot]) for slot in Slot.PROJECTIONS}
    return Block(weights=MhaWeights(
        wq=merged[Slot.Q], wk=merged[Slot.K], wv=merged[Slot.V], wout=merged[Slot.OUT], heads=w.heads,
    ))


def merge_stack(stack: EncoderStack) -> EncoderStack:
    return replace(stack, blocks=tuple(merge_block(b) for b in stack.blocks))


def stack_param_count(stack: EncoderStack) -> int:
    return sum(b.adapters.n_params for b in stack.blocks if b.adapters is not None)


def random_stack(d_model: int, heads: int, n_blocks: int, seed: int,
                 std: Optional[float] = None, n_tokens: Optional[int] = None) -> EncoderStack:
    """Adapter-free stack with N(0, std^2) projections (std defaults to 1/sqrt(d_model))."""
    std = 1.0 / math.sqrt(d_model) if std is None else std
    blocks = []
    for i in range(n_blocks):
        mats = [gaussian_matrix(d_model, d_model, std, stream_seed(seed, "backbone", 4 * i + j)) for j in range(4)]
        blocks.append(Block(weights=MhaWeights(*mats, heads=heads)))
    return EncoderStack(blocks=tuple(blocks), d_model=d_model, n_tokens=n_tokens)

