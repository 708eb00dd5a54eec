"""Tiling, mask reassembly, component analysis, ROI cropping and the Otsu baseline.

Images are ``uint8`` arrays of shape ``(H, W, 3)``; masks are ``bool`` arrays
of shape ``(H, W)``.  Bounding boxes are inclusive ``(x_min, y_min, x_max, y_max)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from .autograd import ContractViolation, Tensor

PAPER_MIN_AREA = 200
PAPER_PATCH_SIDE = 256
LUMA = (0.299, 0.587, 0.114)
BACILLI_COLOR = (0, 255, 0)
OTHER_COLOR = (255, 0, 0)


@dataclass(frozen=True)
class PatchGrid:
    patch_side: int
    cols: int
    rows: int

    @property
    def count(self) -> int:
        return self.cols * self.rows

    @property
    def covered_shape(self) -> tuple[int, int]:
        return self.rows * self.patch_side, self.cols * self.patch_side

    def origins(self) -> list[tuple[int, int]]:
        """(x, y) of every patch, row-major."""
        p = self.patch_side
        return [(c * p, r * p) for r in range(self.rows) for c in range(self.cols)]


@dataclass
class Region:
    id: int
    runs: np.ndarray  # (k, 3) rows of (y, x_start, x_end), inclusive
    area: int
    bbox: tuple[int, int, int, int]

    def pixels(self) -> tuple[np.ndarray, np.ndarray]:
        ys, xs = [], []
        for y, x0, x1 in self.runs:
            xs.append(np.arange(x0, x1 + 1))
            ys.append(np.full(x1 - x0 + 1, y))
        if not xs:
            return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
        return np.concatenate(ys), np.concatenate(xs)

    def to_mask(self, shape: tuple[int, int]) -> np.ndarray:
        m = np.zeros(shape, dtype=bool)
        ys, xs = self.pixels()
        m[ys, xs] = True
        return m

    @property
    def width(self) -> int:
        return self.bbox[2] - self.bbox[0] + 1

    @property
    def height(self) -> int:
        return self.bbox[3] - self.bbox[1] + 1


@dataclass
class ROI:
    region_id: int
    bbox: tuple[int, int, int, int]
    crop: np.ndarray
    region: Optional[Region] = field(default=None, repr=False)
    truth_label: Optional[int] = None
    predicted_label: Optional[int] = None
    score: Optional[float] = None


# -- tiling ----------------------------------------------------------------
def patch_grid(width: int, height: int, patch_side: int) -> PatchGrid:
    if patch_side < 1:
        raise ContractViolation("patch_side must be positive")
    if patch_side > min(width, height):
        raise ContractViolation(f"patch {patch_side} larger than image {width}x{height}")
    return PatchGrid(patch_side, width // patch_side, height // patch_side)


def split_into_patches(image: np.ndarray, patch_side: int) -> tuple[list[np.ndarray], PatchGrid]:
    """Cut ``image`` into full ``patch_side`` tiles, row-major; the right and
    bottom remainders are dropped."""
    h, w = image.shape[:2]
    grid = patch_grid(w, h, patch_side)
    p = patch_side
    patches = [image[y : y + p, x : x + p].copy() for x, y in grid.origins()]
    return patches, grid


def reassemble_mask(patch_masks: Sequence[np.ndarray], grid: PatchGrid) -> np.ndarray:
    if len(patch_masks) != grid.count:
        raise ContractViolation(f"got {len(patch_masks)} patches for a grid of {grid.count}")
    p = grid.patch_side
    out = np.zeros(grid.covered_shape, dtype=bool)
    for (x, y), m in zip(grid.origins(), patch_masks):
        m = np.asarray(m)
        if m.shape != (p, p):
            raise ContractViolation(f"patch mask shape {m.shape} != ({p}, {p})")
        out[y : y + p, x : x + p] = m
    return out


def crop_to_grid(array: np.ndarray, grid: PatchGrid) -> np.ndarray:
    h, w = grid.covered_shape
    return array[:h, :w]


def binarize(prob_map, threshold: float = 0.5) -> np.ndarray:
    """Foreground where the probability is strictly above ``threshold``."""
    data = prob_map.data if isinstance(prob_map, Tensor) else np.asarray(prob_map)
    if data.ndim == 4:
        if data.shape[:2] != (1, 1):
            raise ContractViolation(f"expected [1,1,H,W], got {data.shape}")
        data = data[0, 0]
    return data > threshold


# -- components ------------------------------------------------------------
_EIGHT = np.ones((3, 3), dtype=bool)
_FOUR = ndimage.generate_binary_structure(2, 1)


def connected_components(mask: np.ndarray, connectivity: int = 8) -> list[Region]:
    """Maximal connected foreground regions, numbered in raster order of
    their first pixel."""
    mask = np.asarray(mask, dtype=bool)
    if connectivity not in (4, 8):
        raise ContractViolation("connectivity must be 4 or 8")
    lab, n = ndimage.label(mask, structure=_EIGHT if connectivity == 8 else _FOUR)
    if n == 0:
        return []
    flat = lab.ravel()
    fg = np.flatnonzero(flat)
    # renumber so ids follow first occurrence in a row-major scan
    _, first = np.unique(flat[fg], return_index=True)
    order = np.argsort(fg[first], kind="stable")
    remap = np.zeros(n + 1, dtype=np.int64)
    remap[np.unique(flat[fg])[order]] = np.arange(1, n + 1)
    lab = remap[lab]

    left = np.pad(lab, ((0, 0), (1, 0)))[:, :-1]
    right = np.pad(lab, ((0, 0), (0, 1)))[:, 1:]
    sy, sx = np.nonzero((lab > 0) & (left != lab))
    _, ex = np.nonzero((lab > 0) & (right != lab))
    run_lab = lab[sy, sx]
    runs = np.stack([sy, sx, ex], axis=1)
    by_label = np.argsort(run_lab, kind="stable")
    runs, run_lab = runs[by_label], run_lab[by_label]
    bounds = np.searchsorted(run_lab, np.arange(1, n + 2))
    areas = np.bincount(lab.ravel(), minlength=n + 1)
    regions = []
    for i, sl in enumerate(ndimage.find_objects(lab), start=1):
        ys, xs = sl
        bbox = (xs.start, ys.start, xs.stop - 1, ys.stop - 1)
        regions.append(Region(i, runs[bounds[i - 1] : bounds[i]], int(areas[i]), bbox))
    return regions


def scaled_min_area(patch_side: int, base: float = PAPER_MIN_AREA, reference_side: int = PAPER_PATCH_SIDE) -> float:
    return base * (patch_side / reference_side) ** 2


def filter_regions_by_area(regions: Sequence[Region], min_area: float) -> list[Region]:
    """Keep regions whose area is strictly above ``min_area``."""
    if min_area < 0:
        raise ContractViolation("min_area must be >= 0")
    return [r for r in regions if r.area > min_area]


def extract_rois(image: np.ndarray, regions: Sequence[Region]) -> list[ROI]:
    h, w = image.shape[:2]
    rois = []
    for r in regions:
        x0, y0, x1, y1 = r.bbox
        if x0 < 0 or y0 < 0 or x1 >= w or y1 >= h or x1 < x0 or y1 < y0:
            raise ContractViolation(f"bbox {r.bbox} of region {r.id} outside image {w}x{h}")
        rois.append(ROI(r.id, r.bbox, image[y0 : y1 + 1, x0 : x1 + 1].copy(), region=r))
    return rois


# -- Otsu baseline ------------------------------------------------------------
def to_gray(image: np.ndarray) -> np.ndarray:
    img = np.asarray(image, dtype=np.float64)
    g = img[..., 0] * LUMA[0] + img[..., 1] * LUMA[1] + img[..., 2] * LUMA[2]
    return np.clip(np.floor(g + 0.5), 0, 255).astype(np.uint8)


def otsu_level(gray: np.ndarray) -> Optional[int]:
    """Threshold t maximising between-class variance of {g <= t} vs {g > t}.

    Scores are compared exactly in integer arithmetic; the smallest maximiser
    wins.  Returns None when no split has positive variance.
    """
    hist = np.bincount(np.asarray(gray, dtype=np.uint8).ravel(), minlength=256)
    n = int(hist.sum())
    total = int((hist * np.arange(256)).sum())
    best_t, best_num, best_den = None, 0, 1
    n0 = s0 = 0
    for t in range(255):
        n0 += int(hist[t])
        s0 += t * int(hist[t])
        n1 = n - n0
        if n0 == 0 or n1 == 0:
            continue
        # variance is proportional to (n*s0 - n0*total)^2 / (n0*n1)
        num = (n * s0 - n0 * total) ** 2
        den = n0 * n1
        if num * best_den > best_num * den:
            best_t, best_num, best_den = t, num, den
    return best_t


def otsu_threshold(image: np.ndarray, foreground: str = "dark") -> tuple[int, np.ndarray]:
    """Global Otsu binarisation of the luma channel.

    ``foreground="dark"`` marks pixels at or below the threshold; ``"bright"``
    those above it.  A single-level image yields threshold 0 and an empty mask.
    """
    if foreground not in ("dark", "bright"):
        raise ContractViolation("foreground must be 'dark' or 'bright'")
    gray = to_gray(image)
    t = otsu_level(gray)
    if t is None:
        return 0, np.zeros(gray.shape, dtype=bool)
    return t, (gray <= t) if foreground == "dark" else (gray > t)


# -- rendering ---------------------------------------------------------------
def draw_box(image: np.ndarray, bbox: tuple[int, int, int, int], color) -> None:
    x0, y0, x1, y1 = bbox
    image[y0, x0 : x1 + 1] = color
    image[y1, x0 : x1 + 1] = color
    image[y0 : y1 + 1, x0] = color
    image[y0 : y1 + 1, x1] = color


def overlay_render(image: np.ndarray, rois: Sequence[ROI]) -> np.ndarray:
    """Copy of ``image`` with ROI outlines: green for predicted bacilli, red otherwise."""
    out = np.array(image, copy=True)
    for roi in rois:
        draw_box(out, roi.bbox, BACILLI_COLOR if roi.predicted_label == 1 else OTHER_COLOR)
    return out
