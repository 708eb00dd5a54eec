"""Central finite-difference checking of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward, no_grad


@dataclass
class GradCheckReport:
    max_rel_error: float
    checked: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_error < self.tolerance)


def _coords(size: int, sample: int | None, rng: np.random.Generator) -> np.ndarray:
    if sample is None or sample >= size:
        return np.arange(size)
    return np.sort(rng.choice(size, size=sample, replace=False))


def grad_check(
    f: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    step: float = 1e-5,
    tolerance: float = 1e-4,
    floor: float = 1e-5,
    sample: int | None = None,
    seed: int = 0,
    refine: int = 0,
) -> GradCheckReport:
    """Compare backward() against central differences of ``f(*inputs)``.

    ``inputs`` must be float64 tensors with ``requires_grad`` set; ``f`` must be
    deterministic and return a scalar.  The error per coordinate is
    ``|a - n| / max(|a|, |n|, floor)``.  ``sample`` limits the number of
    coordinates probed per input.

    ``refine`` allows that many retries at a 10x smaller step for a
    coordinate that misses the tolerance.  Piecewise-linear layers (ReLU,
    max-pool) put kinks inside a +-step stencil now and then; a wrong backward
    rule disagrees at every step, a kink stops mattering once the step shrinks.
    """
    for t in inputs:
        t.grad = None
    loss = f(*inputs)
    backward(loss)
    rng = np.random.default_rng(seed)
    worst = 0.0
    checked = 0
    for t in inputs:
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad
        flat = t.data.reshape(-1)
        for i in _coords(flat.size, sample, rng):
            a = analytic.reshape(-1)[i]
            h = step
            for _ in range(refine + 1):
                num = _central(f, inputs, flat, i, h)
                err = abs(a - num) / max(abs(a), abs(num), floor)
                if err < tolerance:
                    break
                h /= 10
            worst = max(worst, err)
            checked += 1
    return GradCheckReport(float(worst), checked, tolerance)


def _central(f, inputs, flat, i, h) -> float:
    orig = flat[i]
    with no_grad():
        flat[i] = orig + h
        fp = f(*inputs).item()
        flat[i] = orig - h
        fm = f(*inputs).item()
    flat[i] = orig
    return (fp - fm) / (2 * h)


def weighted_sum(out: Tensor, weights: np.ndarray) -> Tensor:
    """Scalarise an output with fixed weights (a plain sum would cancel
    through softmax-normalised outputs)."""
    return (out * Tensor(weights, dtype=out.dtype)).sum()
