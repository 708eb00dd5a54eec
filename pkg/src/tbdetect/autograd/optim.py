"""Adaptive-moment (Adam) optimiser."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .module import Parameter
from .tensor import ContractViolation


@dataclass
class OptimizerState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


class Adam:
    def __init__(self, params: list[Parameter], lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = [p for p in params if p.trainable]
        self.state = OptimizerState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)
        for p in self.params:
            self.state.m[p.name] = np.zeros_like(p.tensor.data)
            self.state.v[p.name] = np.zeros_like(p.tensor.data)

    @property
    def lr(self) -> float:
        return self.state.lr

    @lr.setter
    def lr(self, value: float) -> None:
        self.state.lr = value

    def zero_grad(self) -> None:
        for p in self.params:
            p.tensor.grad = None

    def step(self) -> None:
        optimizer_step(self.params, self.state)


def optimizer_step(params: list[Parameter], state: OptimizerState) -> None:
    """Apply one bias-corrected Adam update in place."""
    missing = [p.name for p in params if p.trainable and p.tensor.grad is None]
    if missing:
        raise ContractViolation(f"missing gradient for parameters: {', '.join(missing[:5])}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p in params:
        if not p.trainable:
            continue
        g = p.tensor.grad
        m = state.m.setdefault(p.name, np.zeros_like(p.tensor.data))
        v = state.v.setdefault(p.name, np.zeros_like(p.tensor.data))
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        update = state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.tensor.data -= update.astype(p.tensor.dtype, copy=False)
