"""
Tape-based reverse-mode differentiation over a closed set of primitives.

`EagerOps` evaluates the primitives on plain arrays; `Tape` exposes the same
methods on `Node`s and records one vector-Jacobian product (VJP) per call.
Model code written against that shared interface runs either way, so the
graph forward and the plain forward compute identical floats.

Primitive VJPs (g is the upstream gradient, y the output):
    matmul(a, b)             ga = g b^T            gb = a^T g
    add / residual(a, b)     ga = g                gb = g
    scale(a, c)              ga = c g
    transpose(a)             ga = g^T
    rows(a, i, j)            ga = g scattered into rows i:j, zeros elsewhere
    concat_rows(parts)       g split back by row blocks
    softmax_rows(a)          ga = y * (g - rowsum(g * y))
    serial_transform(x,b,a)  u = a x; gx = g + c a^T (b^T g); gb = c g u^T; ga = c (b^T g) x^T
    mse(p, t)                gp = 2 (p - t) / N
    cross_entropy(z, label)  gz = softmax(z) - onehot(label)
    sum_entries(a)           ga = 1
    sq_norm(a)               ga = 2 a
Gradients only flow into nodes that require them: frozen leaves never get one.
"""
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from config import CONFIG
from nn.errors import NondeterminismError, ShapeError

GradientMap = dict[str, np.ndarray]


class EagerOps:
    """Forward definitions of every primitive, on float64 arrays."""

    @staticmethod
    def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
        if a.shape[1] != b.shape[0]:
            raise ShapeError(f"cannot multiply {a.shape[0]}x{a.shape[1]} by {b.shape[0]}x{b.shape[1]}")
        return a @ b

    @staticmethod
    def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
        if a.shape != b.shape:
            raise ShapeError(f"cannot add {a.shape} and {b.shape}")
        return a + b

    residual = add

    @staticmethod
    def scale(a: np.ndarray, c: float) -> np.ndarray:
        return a * c

    @staticmethod
    def transpose(a: np.ndarray) -> np.ndarray:
        return a.T.copy()

    @staticmethod
    def rows(a: np.ndarray, start: int, stop: int) -> np.ndarray:
        return a[start:stop].copy()

    @staticmethod
    def concat_rows(parts: Sequence[np.ndarray]) -> np.ndarray:
        return np.vstack(parts)

    @staticmethod
    def softmax_rows(a: np.ndarray) -> np.ndarray:
        shifted = a - a.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=1, keepdims=True)

    @staticmethod
    def serial_transform(x: np.ndarray, b: np.ndarray, a: np.ndarray, c: float = 1.0) -> np.ndarray:
        if a.shape[1] != x.shape[0] or b.shape[0] != x.shape[0] or b.shape[1] != a.shape[0]:
            raise ShapeError(f"serial pair {b.shape[0]}x{a.shape[1]} cannot transform {x.shape[0]}x{x.shape[1]} input")
        correction = b @ (a @ x)
        return x + (correction if c == 1.0 else correction * c)

    @staticmethod
    def mse(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
        if pred.shape != target.shape:
            raise ShapeError(f"prediction {pred.shape} vs target {target.shape}")
        diff = pred - target
        return np.array([[np.mean(diff * diff)]])

    @staticmethod
    def cross_entropy(logits: np.ndarray, label: int) -> np.ndarray:
        if logits.shape[1] != 1 or not 0 <= label < logits.shape[0]:
            raise ShapeError(f"logits {logits.shape} cannot score label {label}")
        z = logits[:, 0] - logits[:, 0].max()
        log_norm = np.log(np.exp(z).sum())
        return np.array([[log_norm - z[label]]])

    @staticmethod
    def sum_entries(a: np.ndarray) -> np.ndarray:
        return np.array([[a.sum()]])

    @staticmethod
    def sq_norm(a: np.ndarray) -> np.ndarray:
        return np.array([[np.sum(a * a)]])


EAGER = EagerOps()


@dataclass(eq=False)
class Node:
    id: int
    value: np.ndarray
    requires_grad: bool
    trainable: bool = False
    name: Optional[str] = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape


# vjp(g, needs) -> one gradient (or None) per input
Vjp = Callable[[np.ndarray, tuple[bool, ...]], tuple[Optional[np.ndarray], ...]]


@dataclass
class _Entry:
    op: str
    output: int
    inputs: tuple[int, ...]
    vjp: Vjp


@dataclass
class Tape:
    nodes: list[Node] = field(default_factory=list)
    entries: list[_Entry] = field(default_factory=list)

    # --- Leaves ---

    def leaf(self, value, name: Optional[str] = None, trainable: bool = False) -> Node:
        node = Node(
            id=len(self.nodes),
            value=np.asarray(value, dtype=np.float64),
            requires_grad=trainable,
            trainable=trainable,
            name=name,
        )
        self.nodes.append(node)
        return node

    def constant(self, value, name: Optional[str] = None) -> Node:
        return self.leaf(value, name=name, trainable=False)

    @property
    def trainable_leaves(self) -> list[Node]:
        return [n for n in self.nodes if n.trainable]

    def _record(self, op: str, value: np.ndarray, inputs: Sequence[Node], vjp: Vjp) -> Node:
        node = Node(
            id=len(self.nodes),
            value=value,
            requires_grad=any(n.requires_grad for n in inputs),
        )
        self.nodes.append(node)
        if node.requires_grad:
            self.entries.append(_Entry(op, node.id, tuple(n.id for n in inputs), vjp))
        return node

    # --- Primitives ---

    def matmul(self, a: Node, b: Node) -> Node:
        av, bv = a.value, b.value

        def vjp(g, needs):
            return (g @ bv.T if needs[0] else None, av.T @ g if needs[1] else None)

        return self._record("matmul", EAGER.matmul(av, bv), (a, b), vjp)

    def add(self, a: Node, b: Node, op: str = "add") -> Node:
        def vjp(g, needs):
            return (g if needs[0] else None, g if needs[1] else None)

        return self._record(op, EAGER.add(a.value, b.value), (a, b), vjp)

    def residual(self, x: Node, fx: Node) -> Node:
        return self.add(x, fx, op="residual")

    def scale(self, a: Node, c: float) -> Node:
        return self._record("scale", EAGER.scale(a.value, c), (a,), lambda g, needs: (g * c,))

    def transpose(self, a: Node) -> Node:
        return self._record("transpose", EAGER.transpose(a.value), (a,), lambda g, needs: (g.T.copy(),))

    def rows(self, a: Node, start: int, stop: int) -> Node:
        shape = a.shape

        def vjp(g, needs):
            grad = np.zeros(shape)
            grad[start:stop] = g
            return (grad,)

        return self._record("rows", EAGER.rows(a.value, start, stop), (a,), vjp)

    def concat_rows(self, parts: Sequence[Node]) -> Node:
        bounds = np.cumsum([0] + [p.shape[0] for p in parts])

        def vjp(g, needs):
            return tuple(g[bounds[i]:bounds[i + 1]] if needs[i] else None for i in range(len(parts)))

        return self._record("concat_rows", EAGER.concat_rows([p.value for p in parts]), parts, vjp)

    def softmax_rows(self, a: Node) -> Node:
        y = EAGER.softmax_rows(a.value)

        def vjp(g, needs):
            return (y * (g - np.sum(g * y, axis=1, keepdims=True)),)

        return self._record("softmax_rows", y, (a,), vjp)

    def serial_transform(self, x: Node, b: Node, a: Node, c: float = 1.0) -> Node:
        xv, bv, av = x.value, b.value, a.value
        u = av @ xv

        def vjp(g, needs):
            bt_g = bv.T @ g
            gx = g + c * (av.T @ bt_g) if needs[0] else None
            gb = c * (g @ u.T) if needs[1] else None
            ga = c * (bt_g @ xv.T) if needs[2] else None
            return (gx, gb, ga)

        return self._record("serial_transform", EAGER.serial_transform(xv, bv, av, c), (x, b, a), vjp)

    def mse(self, pred: Node, target: np.ndarray) -> Node:
        pv = pred.value
        target = np.asarray(target, dtype=np.float64)

        def vjp(g, needs):
            return (2.0 * (pv - target) / pv.size * g[0, 0],)

        return self._record("mse", EAGER.mse(pv, target), (pred,), vjp)

    def cross_entropy(self, logits: Node, label: int) -> Node:
        zv = logits.value

        def vjp(g, needs):
            probs = EAGER.softmax_rows(zv.T).T
            probs[label, 0] -= 1.0
            return (probs * g[0, 0],)

        return self._record("cross_entropy", EAGER.cross_entropy(zv, label), (logits,), vjp)

    def sum_entries(self, a: Node) -> Node:
        shape = a.shape
        return self._record("sum_entries", EAGER.sum_entries(a.value), (a,),
                            lambda g, needs: (np.full(shape, g[0, 0]),))

    def sq_norm(self, a: Node) -> Node:
        av = a.value
        return self._record("sq_norm", EAGER.sq_norm(av), (a,), lambda g, needs: (2.0 * av * g[0, 0],))


def backward(tape: Tape, loss: Node) -> GradientMap:
    """
    Reverse sweep from a 1x1 loss node. Returns a gradient for every trainable
    leaf (zeros when the loss does not depend on it), keyed by leaf name.
    """
    if loss.shape != (1, 1):
        raise ShapeError(f"loss must be 1x1, got {loss.shape}")
    grads: dict[int, np.ndarray] = {loss.id: np.ones((1, 1))}
    for entry in reversed(tape.entries):
        if entry.output > loss.id:
            continue
        g = grads.pop(entry.output, None)
        if g is None:
            continue
        needs = tuple(tape.nodes[i].requires_grad for i in entry.inputs)
        for node_id, grad in zip(entry.inputs, entry.vjp(g, needs)):
            if grad is None:
                continue
            if node_id in grads:
                grads[node_id] = grads[node_id] + grad
            else:
                grads[node_id] = grad

    result: GradientMap = {}
    for node in tape.trainable_leaves:
        key = node.name if node.name is not None else f"node{node.id}"
        result[key] = grads.get(node.id, np.zeros_like(node.value))
    return result


# (tape, 1x1 loss node) built from the current contents of `params`
Closure = Callable[[dict[str, np.ndarray]], tuple[Tape, Node]]


def grad_check(closure: Closure, params: dict[str, np.ndarray], eps: float = 1e-5,
               full_limit: Optional[int] = None, sample: Optional[int] = None, seed: int = 0) -> float:
    """
    Max relative error between backward() and central differences
    (f(p + eps) - f(p - eps)) / (2 eps), with denominator max(|a|, |n|, 1e-8).

    Every entry is probed when the parameters hold at most `full_limit` scalars
    (CONFIG.GRADCHECK_FULL_LIMIT); above that a seeded subsample of `sample`
    entries (CONFIG.GRADCHECK_SAMPLE) is drawn. `params` is restored on return.
    """
    if not 0.0 < eps <= 1e-3:
        raise ValueError(f"eps must lie in (0, 1e-3], got {eps}")
    full_limit = CONFIG.GRADCHECK_FULL_LIMIT if full_limit is None else full_limit
    sample = CONFIG.GRADCHECK_SAMPLE if sample is None else sample

    def value() -> float:
        _, loss = closure(params)
        if loss.shape != (1, 1):
            raise ShapeError(f"loss must be 1x1, got {loss.shape}")
        return float(loss.value[0, 0])

    first = value()
    if value() != first:
        raise NondeterminismError("closure returned different losses for identical parameters")
    tape, loss = closure(params)
    analytic = backward(tape, loss)
    missing = sorted(set(params) - set(analytic))
    if missing:
        raise ValueError(f"closure does not bind parameter {missing[0]!r} as a trainable leaf")

    entries = [(name, idx) for name in sorted(params) for idx in np.ndindex(params[name].shape)]
    if len(entries) > full_limit:
        rng = np.random.Generator(np.random.PCG64(seed))
        picked = rng.choice(len(entries), size=min(sample, len(entries)), replace=False)
        entries = [entries[i] for i in sorted(picked)]

    worst = 0.0
    for name, idx in entries:
        p = params[name]
        saved = p[idx]
        try:
            p[idx] = saved + eps
            up = value()
            p[idx] = saved - eps
            down = value()
        finally:
            p[idx] = saved
        numeric = (up - down) / (2.0 * eps)
        a = float(analytic[name][idx])
        worst = max(worst, abs(a - numeric) / max(abs(a), abs(numeric), 1e-8))
    return worst
