"""
Fine-tuning loop over adapter factors. Backbone weights enter every graph as
constants, so they never receive a gradient and are never written.
"""
import logging
import math
import time
from typing import Any, Literal, Mapping, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from config import CONFIG
from nn.adapter import AdapterMode, AdapterSet, LowRankPair, init_adapter, scaling, slot_seed
from nn.attention import BlockTensors, EncoderStack, encode, encoder_forward, random_stack, stack_param_count
from nn.autograd import EAGER, GradientMap, Node, Tape, backward, grad_check
from nn.errors import DivergenceError
from nn.linalg import gaussian_matrix
from training.dataset import Dataset, Split
from training.optim import ParamGroup, make_optimizer
from utils.seeds import stream_seed

# Training arms as named on the command line
ARMS = {
    "lora": (AdapterMode.PARALLEL, False),
    "serial": (AdapterMode.SERIAL, False),
    "lora+": (AdapterMode.PARALLEL, True),
    "serial+": (AdapterMode.SERIAL, True),
}

LORA_PLUS_RATIO = 20.0


class TrainConfig(BaseModel):
    """Hyperparameters of one fine-tuning run."""
    model_config = ConfigDict(extra="forbid")

    optimizer: Literal["sgd", "adam"] = "adam"
    base_lr: float = Field(1e-2, gt=0, description="Learning rate of the A factors.")
    # lr(B) = ab_ratio * lr(A); resolved by the validator below
    ab_ratio: Optional[float] = Field(None, ge=1)
    epochs: int = Field(..., ge=0)
    batch: int = Field(16, ge=1)
    full_batch: bool = False
    seed: int = Field(0, ge=0)
    rank: int = Field(..., ge=1)
    mode: Literal["parallel", "serial"]
    plus_variant: bool = False
    # A-factor init std; None means 1/sqrt(rank)
    init_std: Optional[float] = Field(None, ge=0)

    @model_validator(mode="after")
    def resolve_ab_ratio(self) -> "TrainConfig":
        if not self.plus_variant:
            if self.ab_ratio not in (None, 1.0):
                logging.warning(f"ab_ratio={self.ab_ratio} ignored without the plus variant; using 1")
            self.ab_ratio = 1.0
        elif self.ab_ratio is None:
            self.ab_ratio = LORA_PLUS_RATIO
        return self

    @classmethod
    def for_arm(cls, arm: str, **kwargs) -> "TrainConfig":
        if arm not in ARMS:
            raise ValueError(f"unknown arm {arm!r}; expected one of {sorted(ARMS)}")
        mode, plus = ARMS[arm]
        return cls(mode=mode, plus_variant=plus, **kwargs)

    @property
    def arm(self) -> str:
        base = "serial" if self.mode == AdapterMode.SERIAL else "lora"
        return base + ("+" if self.plus_variant else "")


class EpochRecord(BaseModel):
    epoch: int
    train_loss: float
    eval_loss: float
    seconds: float
    eval_accuracy: Optional[float] = None


class TrainHistory(BaseModel):
    """Per-epoch losses of one run plus its final adapters."""
    config: TrainConfig
    records: list[EpochRecord] = Field(default_factory=list)
    initial_eval_loss: float
    trainable_params: int
    checkpoint: Optional[str] = None
    # Final list[AdapterSet]; kept out of dumps
    adapters: list[Any] = Field(default_factory=list, exclude=True)

    @property
    def best_eval_loss(self) -> float:
        return min((r.eval_loss for r in self.records), default=self.initial_eval_loss)

    @property
    def final_eval_loss(self) -> float:
        return self.records[-1].eval_loss if self.records else self.initial_eval_loss


# --- Parameters ---

def param_name(block: int, slot: str, factor: str) -> str:
    return f"block{block}.{slot}.{factor}"


def adapter_params(adapters: Sequence[AdapterSet]) -> dict[str, np.ndarray]:
    """Writable copies of every factor, keyed block{i}.{slot}.{A|B}."""
    params = {}
    for i, ad in enumerate(adapters):
        for slot, pair in ad.pairs().items():
            params[param_name(i, slot, "A")] = np.array(pair.a, dtype=np.float64)
            params[param_name(i, slot, "B")] = np.array(pair.b, dtype=np.float64)
    return params


def adapters_from_params(template: Sequence[AdapterSet], params: Mapping[str, np.ndarray]) -> list[AdapterSet]:
    result = []
    for i, ad in enumerate(template):
        pairs = {
            slot: LowRankPair(b=params[param_name(i, slot, "B")].copy(), a=params[param_name(i, slot, "A")].copy())
            for slot in ad.pairs()
        }
        result.append(AdapterSet.from_pairs(ad.mode, pairs))
    return result


def make_param_groups(adapters: AdapterSet | Sequence[AdapterSet], cfg: TrainConfig) -> list[ParamGroup]:
    """A factors at base_lr, B factors at ab_ratio * base_lr."""
    if isinstance(adapters, AdapterSet):
        adapters = [adapters]
    names = list(adapter_params(adapters))
    return [
        ParamGroup(name="A", lr=cfg.base_lr, params=[n for n in names if n.endswith(".A")]),
        ParamGroup(name="B", lr=cfg.base_lr * cfg.ab_ratio, params=[n for n in names if n.endswith(".B")]),
    ]


def bind_stack(tape: Tape, stack: EncoderStack, template: Sequence[AdapterSet],
               params: Mapping[str, np.ndarray]) -> list[BlockTensors]:
    """Backbone weights as constants, adapter factors as trainable leaves."""
    blocks = []
    for i, block in enumerate(stack.blocks):
        w = block.weights
        ad = template[i] if template else None
        factors = {}
        if ad is not None:
            for slot in ad.pairs():
                b_name, a_name = param_name(i, slot, "B"), param_name(i, slot, "A")
                factors[slot] = (
                    tape.leaf(params[b_name], name=b_name, trainable=True),
                    tape.leaf(params[a_name], name=a_name, trainable=True),
                )
        blocks.append(BlockTensors(
            wq=tape.constant(w.wq), wk=tape.constant(w.wk), wv=tape.constant(w.wv), wout=tape.constant(w.wout),
            heads=w.heads,
            mode=ad.mode if ad is not None else None,
            factors=factors,
            scale=scaling(ad.rank) if ad is not None else 1.0,
        ))
    return blocks


# --- Losses ---

def _mean_pool(out: np.ndarray, n_tokens: int) -> np.ndarray:
    return EAGER.matmul(out, np.full((n_tokens, 1), 1.0 / n_tokens))


def sample_loss(tape: Tape, out: Node, dataset: Dataset, index: int,
                head: Optional[Node] = None, pool: Optional[Node] = None) -> Node:
    if dataset.is_classification:
        logits = tape.matmul(head, tape.matmul(out, pool))
        return tape.cross_entropy(logits, dataset.labels[index])
    return tape.mse(out, dataset.targets[index])


def evaluate(stack: EncoderStack, dataset: Dataset, indices: Sequence[int]) -> tuple[float, Optional[float]]:
    """Mean loss (and accuracy for classification) of the eager forward."""
    if not indices:
        return 0.0, None
    losses, correct = [], 0
    for i in indices:
        out = encoder_forward(dataset.inputs[i], stack)
        if dataset.is_classification:
            logits = EAGER.matmul(dataset.head, _mean_pool(out, dataset.n_tokens))
            losses.append(float(EAGER.cross_entropy(logits, dataset.labels[i])[0, 0]))
            correct += int(np.argmax(logits[:, 0]) == dataset.labels[i])
        else:
            losses.append(float(EAGER.mse(out, dataset.targets[i])[0, 0]))
    accuracy = correct / len(indices) if dataset.is_classification else None
    return float(np.mean(losses)), accuracy


def batch_loss(stack: EncoderStack, template: Sequence[AdapterSet], params: Mapping[str, np.ndarray],
               dataset: Dataset, indices: Sequence[int]) -> tuple[float, GradientMap]:
    """Mean loss over `indices` and its gradient with respect to every factor."""
    tape = Tape()
    blocks = bind_stack(tape, stack, template, params)
    head = pool = None
    if dataset.is_classification:
        head = tape.constant(dataset.head)
        pool = tape.constant(np.full((dataset.n_tokens, 1), 1.0 / dataset.n_tokens))
    total = None
    for i in indices:
        out = encode(tape, tape.constant(dataset.inputs[i]), blocks)
        loss = sample_loss(tape, out, dataset, i, head, pool)
        total = loss if total is None else tape.add(total, loss)
    mean = tape.scale(total, 1.0 / len(indices))
    return float(mean.value[0, 0]), backward(tape, mean)


# --- Training ---

def initial_adapters(stack: EncoderStack, cfg: TrainConfig) -> list[AdapterSet]:
    if stack.mode is not None:
        if stack.mode != cfg.mode:
            raise ValueError(f"stack carries {stack.mode} adapters but the config asks for {cfg.mode}")
        return [b.adapters for b in stack.blocks]
    return [init_adapter(cfg.mode, stack.d_model, cfg.rank, cfg.init_std, seed=cfg.seed, block=i)
            for i in range(len(stack.blocks))]


def train(stack: EncoderStack, task: Dataset, cfg: TrainConfig) -> TrainHistory:
    """
    Optimizes the adapter factors of `stack` on `task`. Adapters are freshly
    initialized from cfg unless the stack already carries some of cfg.mode.
    MSE for regression datasets, softmax cross-entropy for classification.
    """
    train_idx = task.indices(Split.TRAIN)
    if not train_idx:
        raise ValueError("dataset has no training samples")
    if task.d_model != stack.d_model:
        raise ValueError(f"dataset d_model={task.d_model} but stack d_model={stack.d_model}")
    eval_idx = task.indices(Split.EVAL) or train_idx

    template = initial_adapters(stack, cfg)
    params = adapter_params(template)
    groups = make_param_groups(template, cfg)
    optimizer = make_optimizer(cfg.optimizer, groups)
    base = stack.without_adapters()
    batch = len(train_idx) if cfg.full_batch else min(cfg.batch, len(train_idx))
    shuffle = np.random.Generator(np.random.PCG64(stream_seed(cfg.seed, "shuffle")))

    adapted = stack.with_adapters(template)
    initial_eval, _ = evaluate(adapted, task, eval_idx)
    history = TrainHistory(
        config=cfg,
        initial_eval_loss=initial_eval,
        trainable_params=stack_param_count(adapted),
    )
    logging.info(f"Training {cfg.arm} r={cfg.rank}: {history.trainable_params} trainable parameters, "
                 f"lr(A)={groups[0].lr:g}, lr(B)={groups[1].lr:g}, {len(train_idx)} train samples")

    for epoch in range(1, cfg.epochs + 1):
        started = time.perf_counter()
        order = [train_idx[j] for j in shuffle.permutation(len(train_idx))]
        seen, running = 0, 0.0
        for step, lo in enumerate(range(0, len(order), batch)):
            chunk = order[lo:lo + batch]
            loss, grads = batch_loss(base, template, params, task, chunk)
            if not math.isfinite(loss):
                raise DivergenceError(epoch, step, loss)
            optimizer.step(params, grads)
            running += loss * len(chunk)
            seen += len(chunk)

        current = adapters_from_params(template, params)
        eval_loss, accuracy = evaluate(base.with_adapters(current), task, eval_idx)
        if not math.isfinite(eval_loss):
            raise DivergenceError(epoch, -1, eval_loss)
        seconds = time.perf_counter() - started if CONFIG.RECORD_WALL_TIME else 0.0
        history.records.append(EpochRecord(
            epoch=epoch, train_loss=running / seen, eval_loss=eval_loss,
            seconds=seconds, eval_accuracy=accuracy,
        ))
        logging.info(f"Epoch {epoch}/{cfg.epochs}: train {running / seen:.6g}, eval {eval_loss:.6g}"
                     + (f", accuracy {accuracy:.4f}" if accuracy is not None else ""))

    history.adapters = adapters_from_params(template, params)
    return history


# --- Gradient check ---

def encoder_gradcheck(mode: str, d_model: int, rank: int, eps: float = 1e-5, heads: int = 2,
                      n_blocks: int = 2, n_tokens: int = 4, seed: int = 0) -> float:
    """
    grad_check on a random encoder with nonzero adapters of `mode`: MSE of the
    encoder output against a random target, differentiated in every factor.
    """
    stack = random_stack(d_model, heads, n_blocks, seed)
    template = []
    for i in range(n_blocks):
        fresh = init_adapter(mode, d_model, rank, seed=seed, block=i)
        template.append(AdapterSet.from_pairs(mode, {
            slot: LowRankPair(
                b=gaussian_matrix(d_model, rank, 1.0 / math.sqrt(rank),
                                  stream_seed(slot_seed(seed, slot, i), "gradcheck-b")),
                a=pair.a,
            )
            for slot, pair in fresh.pairs().items()
        }))
    x = gaussian_matrix(d_model, n_tokens, 1.0, stream_seed(seed, "gradcheck-x"))
    target = gaussian_matrix(d_model, n_tokens, 1.0, stream_seed(seed, "gradcheck-target"))

    def closure(params):
        tape = Tape()
        out = encode(tape, tape.constant(x), bind_stack(tape, stack, template, params))
        return tape, tape.mse(out, target)

    return grad_check(closure, adapter_params(template), eps, seed=seed)
