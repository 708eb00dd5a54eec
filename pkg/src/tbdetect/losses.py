"""Training objectives: pixelwise BCE for the segmenter, focal loss for TBViT."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .autograd import ContractViolation, Tensor, clip, log

PROB_FLOOR = 1e-7


@dataclass
class FocalLossConfig:
    gamma: float = 2.0
    class_weights: tuple = field(default=(1.0, 1.0))

    def __post_init__(self):
        if self.gamma < 0:
            raise ContractViolation("focal gamma must be >= 0")
        if any(w <= 0 for w in self.class_weights):
            raise ContractViolation("class weights must be positive")


def binary_cross_entropy(probs: Tensor, target) -> Tensor:
    """Mean BCE; probabilities clamped to [1e-7, 1 - 1e-7]."""
    t = np.asarray(target, dtype=probs.dtype)
    if t.shape != probs.shape:
        raise ContractViolation(f"target shape {t.shape} != prediction shape {probs.shape}")
    p = clip(probs, PROB_FLOOR, 1.0 - PROB_FLOOR)
    tt = Tensor(t)
    return -(tt * log(p) + (1.0 - tt) * log(1.0 - p)).mean()


def _true_class_prob(probs: Tensor, labels) -> tuple[Tensor, np.ndarray]:
    labels = np.asarray(labels, dtype=np.int64)
    if probs.ndim != 2 or labels.shape != (probs.shape[0],):
        raise ContractViolation(f"probs {probs.shape} and labels {labels.shape} disagree")
    if labels.size and (labels.min() < 0 or labels.max() >= probs.shape[1]):
        raise ContractViolation("labels out of range")
    onehot = np.eye(probs.shape[1], dtype=probs.dtype)[labels]
    return (probs * Tensor(onehot)).sum(axis=1), labels


def focal_loss(probs: Tensor, labels, cfg: FocalLossConfig | None = None) -> Tensor:
    """Mean of ``-w_y (1 - p_y)^gamma log p_y`` over the batch.

    ``p_y`` is floored at 1e-7 inside the log; the modulating factor uses
    ``p_y`` clamped to [1e-7, 1 - 1e-7].  A confident correct prediction
    (``p_y == 1``) therefore contributes exactly zero for every gamma.
    """
    cfg = cfg or FocalLossConfig()
    p_y, labels = _true_class_prob(probs, labels)
    w = np.asarray(cfg.class_weights, dtype=probs.dtype)[labels]
    nll = -log(clip(p_y, PROB_FLOOR, 1.0))
    if cfg.gamma == 0:
        per = nll
    else:
        per = (1.0 - clip(p_y, PROB_FLOOR, 1.0 - PROB_FLOOR)) ** cfg.gamma * nll
    return (per * Tensor(w)).mean()


def cross_entropy(probs: Tensor, labels) -> Tensor:
    p_y, _ = _true_class_prob(probs, labels)
    return -log(clip(p_y, PROB_FLOOR, 1.0)).mean()


def adaptive_class_weights(label_counts: Sequence[int]) -> tuple[float, ...]:
    """Inverse-frequency weights ``total / (num_classes * count)``.

    Balanced counts give all-ones; a class with zero samples is treated as
    having one so the weight stays finite.
    """
    counts = [int(c) for c in label_counts]
    if any(c < 0 for c in counts):
        raise ContractViolation("label counts must be non-negative")
    total = sum(counts)
    k = len(counts)
    return tuple(total / (k * max(c, 1)) for c in counts)
