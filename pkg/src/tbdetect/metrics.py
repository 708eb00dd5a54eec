"""Segmentation overlap scores and ROI-level detection rates."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .autograd import ContractViolation
from .imaging import ROI, connected_components


@dataclass
class ConfusionCounts:
    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    def __post_init__(self):
        if min(self.tp, self.tn, self.fp, self.fn) < 0:
            raise ContractViolation("confusion counts must be non-negative")

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.tn + other.tn, self.fp + other.fp, self.fn + other.fn)

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


@dataclass
class SegScores:
    jaccard: float
    dice: float


@dataclass
class Rates:
    accuracy: Optional[float]
    precision: Optional[float]
    recall: Optional[float]
    f1: Optional[float]


@dataclass
class DetReport:
    counts: ConfusionCounts
    accuracy: Optional[float]
    precision: Optional[float]
    recall: Optional[float]
    f1: Optional[float]
    per_image: list = field(default_factory=list)

    @classmethod
    def from_counts(cls, counts: ConfusionCounts, per_image=None) -> "DetReport":
        r = rates(counts)
        return cls(counts, r.accuracy, r.precision, r.recall, r.f1, list(per_image or []))

    def to_dict(self) -> dict:
        return asdict(self)


def _pair(pred, truth) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(pred, dtype=bool)
    b = np.asarray(truth, dtype=bool)
    if a.shape != b.shape:
        raise ContractViolation(f"mask dimensions differ: {a.shape} vs {b.shape}")
    return a, b


def jaccard(pred, truth) -> float:
    """|A & B| / |A | B|; two empty masks score 1.0."""
    a, b = _pair(pred, truth)
    union = int(np.count_nonzero(a | b))
    if union == 0:
        return 1.0
    return np.count_nonzero(a & b) / union


def dice(pred, truth) -> float:
    """2|A & B| / (|A| + |B|); two empty masks score 1.0."""
    a, b = _pair(pred, truth)
    denom = int(np.count_nonzero(a)) + int(np.count_nonzero(b))
    if denom == 0:
        return 1.0
    return 2 * np.count_nonzero(a & b) / denom


def seg_scores(pred, truth) -> SegScores:
    return SegScores(jaccard(pred, truth), dice(pred, truth))


def _ratio(num: int, den: int) -> Optional[float]:
    return num / den if den else None


def rates(counts: ConfusionCounts) -> Rates:
    """Accuracy, precision, recall and F1; a rate with a zero denominator is None."""
    acc = _ratio(counts.tp + counts.tn, counts.total)
    prec = _ratio(counts.tp, counts.tp + counts.fp)
    rec = _ratio(counts.tp, counts.tp + counts.fn)
    return Rates(acc, prec, rec, f1_score(prec, rec))


def f1_score(precision: Optional[float], recall: Optional[float]) -> Optional[float]:
    if precision is None or recall is None or precision + recall == 0:
        return None
    return 2 * precision * recall / (precision + recall)


def roi_truth_label(roi: ROI, truth: np.ndarray, overlap_threshold: float = 0.5) -> int:
    if roi.region is None:
        raise ContractViolation("ROI carries no region pixels")
    ys, xs = roi.region.pixels()
    if ys.size and (ys.max() >= truth.shape[0] or xs.max() >= truth.shape[1]):
        raise ContractViolation(f"ROI {roi.region_id} lies outside the truth mask {truth.shape}")
    frac = truth[ys, xs].mean() if ys.size else 0.0
    return int(frac >= overlap_threshold)


def match_rois_to_truth(
    rois: Sequence[ROI],
    truth_mask,
    overlap_threshold: float = 0.5,
    connectivity: int = 8,
) -> ConfusionCounts:
    """Tally ROI predictions against ground truth.

    Each ROI is truly bacilli when at least ``overlap_threshold`` of its
    region's pixels are truth foreground; its predicted label comes from the
    classifier.  Every truth component touching no ROI pixel adds one FN.
    Sets ``truth_label`` on each ROI as a side effect.
    """
    truth = np.asarray(truth_mask, dtype=bool)
    counts = ConfusionCounts()
    covered = np.zeros(truth.shape, dtype=bool)
    for roi in rois:
        if roi.predicted_label is None:
            raise ContractViolation(f"ROI {roi.region_id} has no predicted label")
        label = roi_truth_label(roi, truth, overlap_threshold)
        roi.truth_label = label
        ys, xs = roi.region.pixels()
        covered[ys, xs] = True
        pred = int(roi.predicted_label)
        if label and pred:
            counts.tp += 1
        elif label:
            counts.fn += 1
        elif pred:
            counts.fp += 1
        else:
            counts.tn += 1
    for comp in connected_components(truth, connectivity):
        ys, xs = comp.pixels()
        if not covered[ys, xs].any():
            counts.fn += 1
    return counts
