"""Two-stage detection: segment tiles, reassemble, pick regions, classify ROIs."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .autograd import Tensor, no_grad
from .imaging import (
    ROI,
    PatchGrid,
    Region,
    binarize,
    connected_components,
    crop_to_grid,
    extract_rois,
    filter_regions_by_area,
    reassemble_mask,
    scaled_min_area,
    split_into_patches,
)
from .training import image_to_array, roi_batch


@dataclass
class DetectConfig:
    patch_side: int = 64
    threshold: float = 0.5
    min_area: Optional[float] = None  # None: 200 scaled by (patch_side / 256)^2
    connectivity: int = 8
    batch_size: int = 16
    threads: int = 1
    overlap_threshold: float = 0.5

    def effective_min_area(self) -> float:
        return scaled_min_area(self.patch_side) if self.min_area is None else float(self.min_area)


@dataclass
class Detection:
    grid: PatchGrid
    probability: np.ndarray
    mask: np.ndarray
    regions: list[Region]
    rois: list[ROI] = field(default_factory=list)


def segment_image(image: np.ndarray, model, patch_side: int, threshold: float = 0.5, batch_size: int = 16, threads: int = 1):
    """Probability map and binary mask over the grid-covered area of ``image``."""
    patches, grid = split_into_patches(image, patch_side)
    x = np.stack([image_to_array(p) for p in patches])
    batches = [x[s : s + batch_size] for s in range(0, len(x), batch_size)]

    def run(xb):
        with no_grad():
            return model(Tensor(xb), training=False).data[:, 0]

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            outs = list(pool.map(run, batches))
    else:
        outs = [run(b) for b in batches]
    probs = np.concatenate(outs, axis=0)
    p = patch_side
    prob_map = np.zeros(grid.covered_shape, dtype=np.float32)
    for (x0, y0), pm in zip(grid.origins(), probs):
        prob_map[y0 : y0 + p, x0 : x0 + p] = pm
    mask = reassemble_mask([binarize(pm, threshold) for pm in probs], grid)
    return prob_map, mask, grid


def classify_rois(rois: Sequence[ROI], model, batch_size: int = 64) -> None:
    """Set ``score`` (bacilli probability) and ``predicted_label`` (argmax) on each ROI."""
    if not rois:
        return
    side = model.config.roi_side
    x = roi_batch([r.crop for r in rois], side)
    with no_grad():
        probs = np.concatenate(
            [model(Tensor(x[s : s + batch_size]), training=False).data for s in range(0, len(x), batch_size)]
        )
    for roi, p in zip(rois, probs):
        roi.score = float(p[1])
        roi.predicted_label = int(p.argmax())


def detect(image: np.ndarray, seg_model, cls_model=None, cfg: DetectConfig | None = None) -> Detection:
    cfg = cfg or DetectConfig()
    prob, mask, grid = segment_image(image, seg_model, cfg.patch_side, cfg.threshold, cfg.batch_size, cfg.threads)
    regions = filter_regions_by_area(connected_components(mask, cfg.connectivity), cfg.effective_min_area())
    rois = extract_rois(crop_to_grid(image, grid), regions)
    if cls_model is not None:
        classify_rois(rois, cls_model)
    return Detection(grid, prob, mask, regions, rois)
