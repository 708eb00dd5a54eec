"""Named parameter containers shared by both models."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .tensor import DEFAULT_DTYPE, ContractViolation, Tensor


@dataclass
class Parameter:
    name: str
    tensor: Tensor
    trainable: bool = True


def make_rng(seed: int) -> np.random.Generator:
    """The package-wide portable generator (Philox-4x64 counter-based)."""
    return np.random.Generator(np.random.Philox(seed))


def fan_in_uniform(rng: np.random.Generator, shape: tuple, fan_in: int, dtype=DEFAULT_DTYPE) -> np.ndarray:
    limit = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Module:
    """Ordered tree of parameters addressed by dotted names."""

    def __init__(self) -> None:
        self._params: dict[str, Parameter] = {}
        self._children: dict[str, Module] = {}

    def add_param(self, name: str, data: np.ndarray, trainable: bool = True) -> Tensor:
        if name in self._params or name in self._children:
            raise ContractViolation(f"duplicate parameter name {name!r}")
        t = Tensor(data, requires_grad=trainable, dtype=data.dtype)
        self._params[name] = Parameter(name, t, trainable)
        return t

    def add_module(self, name: str, module: "Module") -> "Module":
        if name in self._params or name in self._children:
            raise ContractViolation(f"duplicate child name {name!r}")
        self._children[name] = module
        return module

    def named_parameters(self, prefix: str = "") -> Iterator[Parameter]:
        for name, p in self._params.items():
            yield Parameter(prefix + name, p.tensor, p.trainable)
        for name, child in self._children.items():
            yield from child.named_parameters(prefix + name + ".")

    def parameters(self) -> list[Parameter]:
        return list(self.named_parameters())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {p.name: p.tensor.data for p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = {p.name: p for p in self.named_parameters()}
        if set(params) != set(state):
            missing = sorted(set(params) - set(state))
            extra = sorted(set(state) - set(params))
            raise ContractViolation(f"state mismatch: missing={missing[:5]} unexpected={extra[:5]}")
        for name, p in params.items():
            arr = np.asarray(state[name])
            if arr.shape != p.tensor.shape:
                raise ContractViolation(f"shape mismatch for {name}: {arr.shape} vs {p.tensor.shape}")
            # in place, so tensors referenced elsewhere (optimiser, ops) stay valid
            p.tensor.data[...] = arr

    def astype(self, dtype) -> "Module":
        """Cast every parameter in place (used for float64 gradient checks)."""
        for p in self.named_parameters():
            p.tensor.data = p.tensor.data.astype(dtype)
        return self

    def zero_grad(self) -> None:
        for p in self.named_parameters():
            p.tensor.grad = None
