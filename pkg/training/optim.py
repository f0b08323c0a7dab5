from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from config import CONFIG


@dataclass
class ParamGroup:
    """Parameters sharing one learning rate."""
    name: str
    lr: float
    params: list[str] = field(default_factory=list)


class Optimizer:
    """Updates parameter arrays in place, group by group, in a fixed order."""

    def __init__(self, groups: Sequence[ParamGroup]):
        self.groups = list(groups)
        seen: set[str] = set()
        for g in self.groups:
            overlap = seen.intersection(g.params)
            if overlap:
                raise ValueError(f"parameter {sorted(overlap)[0]} appears in more than one group")
            seen.update(g.params)

    def step(self, params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray]) -> None:
        raise NotImplementedError


class SGD(Optimizer):
    def step(self, params, grads):
        for group in self.groups:
            for name in group.params:
                params[name] -= group.lr * grads[name]


class Adam(Optimizer):
    """Adam with bias correction; betas and eps come from CONFIG unless given."""

    def __init__(self, groups: Sequence[ParamGroup], beta1: float | None = None,
                 beta2: float | None = None, eps: float | None = None):
        super().__init__(groups)
        self.beta1 = CONFIG.ADAM_BETA1 if beta1 is None else beta1
        self.beta2 = CONFIG.ADAM_BETA2 if beta2 is None else beta2
        self.eps = CONFIG.ADAM_EPS if eps is None else eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params, grads):
        self.t += 1
        bias1 = 1.0 - self.beta1 ** self.t
        bias2 = 1.0 - self.beta2 ** self.t
        for group in self.groups:
            for name in group.params:
                g = grads[name]
                m = self.m.get(name)
                if m is None:
                    m = self.m[name] = np.zeros_like(g)
                    self.v[name] = np.zeros_like(g)
                v = self.v[name]
                m *= self.beta1
                m += (1.0 - self.beta1) * g
                v *= self.beta2
                v += (1.0 - self.beta2) * g * g
                m_hat = m / bias1
                v_hat = v / bias2
                params[name] -= group.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def make_optimizer(kind: str, groups: Sequence[ParamGroup]) -> Optimizer:
    if kind == "sgd":
        return SGD(groups)
    if kind == "adam":
        return Adam(groups)
    raise ValueError(f"unknown optimizer {kind!r}")
