"""Synthetic bright-field smear images with rod-shaped bacilli.

Rods are pink/red curved capsules on a blue-cyan background; round
distractor blobs share the rod palette but never appear in the mask.
Everything is a pure function of :class:`SynthConfig` through a Philox
counter-based generator, keyed by ``seed`` with the image index in the
high counter word.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.ndimage import binary_dilation

REFERENCE_SIDE = 256


@dataclass
class SynthConfig:
    width: int = 256
    height: int = 256
    bacilli: tuple = (4, 10)
    rod_length: tuple = (8.0, 24.0)
    rod_width: tuple = (2.0, 5.0)
    max_bend: float = 0.15
    distractors: tuple = (0, 3)
    distractor_radius: tuple = (3.0, 6.0)
    noise_level: float = 6.0
    background_rgb: tuple = (150, 190, 215)
    rod_rgb: tuple = (200, 60, 110)
    color_jitter: float = 18.0
    antialias: bool = False
    non_overlapping: bool = True
    seed: int = 0

    def scale(self) -> float:
        return min(self.width, self.height) / REFERENCE_SIDE

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SynthObject:
    kind: str  # "bacillus" or "distractor"
    bbox: tuple  # inclusive (x0, y0, x1, y1)
    area: int


@dataclass
class SynthSample:
    image: np.ndarray
    mask: np.ndarray
    objects: list = field(default_factory=list)

    @property
    def distractor_boxes(self) -> list:
        return [o.bbox for o in self.objects if o.kind == "distractor"]


def image_rng(seed: int, index: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=seed, counter=[0, 0, 0, index]))


def _segment_distance(px: np.ndarray, py: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Distance from pixel centres to a polyline."""
    best = np.full(px.shape, np.inf)
    for (ax, ay), (bx, by) in zip(pts[:-1], pts[1:]):
        dx, dy = bx - ax, by - ay
        ll = dx * dx + dy * dy
        t = np.clip(((px - ax) * dx + (py - ay) * dy) / ll, 0.0, 1.0) if ll > 0 else 0.0
        d = np.hypot(px - (ax + t * dx), py - (ay + t * dy))
        best = np.minimum(best, d)
    return best


def _rod_footprint(rng, cfg: SynthConfig):
    s = cfg.scale()
    length = rng.uniform(*cfg.rod_length) * s
    width = rng.uniform(*cfg.rod_width) * s
    theta = rng.uniform(0, np.pi)
    bend = rng.uniform(-cfg.max_bend, cfg.max_bend) * length
    ux, uy = np.cos(theta), np.sin(theta)
    half = length / 2 - width / 2
    p0 = np.array([-half * ux, -half * uy])
    p2 = -p0
    ctrl = np.array([-uy * bend, ux * bend])
    t = np.linspace(0.0, 1.0, 9)[:, None]
    pts = (1 - t) ** 2 * p0 + 2 * (1 - t) * t * ctrl + t**2 * p2
    r = width / 2
    ext = np.abs(pts).max() + r + 1
    return pts, r, ext


def _place(rng, cfg: SynthConfig, ext: float, occupied: np.ndarray, stamp_fn, attempts: int = 60):
    h, w = cfg.height, cfg.width
    lo = int(np.ceil(ext))
    if 2 * lo >= min(w, h):
        return None
    for _ in range(attempts):
        cx = rng.uniform(lo, w - lo)
        cy = rng.uniform(lo, h - lo)
        fp = stamp_fn(cx, cy)
        if fp is None:
            continue
        ys, xs, _ = fp
        if cfg.non_overlapping and occupied[ys, xs].any():
            continue
        return fp
    return None


def _stamp(cx, cy, ext, dist_fn, h, w, aa: bool):
    x0, x1 = max(int(np.floor(cx - ext)), 0), min(int(np.ceil(cx + ext)), w - 1)
    y0, y1 = max(int(np.floor(cy - ext)), 0), min(int(np.ceil(cy + ext)), h - 1)
    yy, xx = np.mgrid[y0 : y1 + 1, x0 : x1 + 1]
    d = dist_fn(xx + 0.5 - cx, yy + 0.5 - cy)
    inside = d <= 0
    if not inside.any():
        return None
    cover = np.clip(0.5 - d, 0.0, 1.0) if aa else inside.astype(np.float64)
    sel = cover > 0
    return yy[inside], xx[inside], (yy[sel], xx[sel], cover[sel])


def _background(rng, cfg: SynthConfig) -> np.ndarray:
    h, w = cfg.height, cfg.width
    base = np.array(cfg.background_rgb, dtype=np.float64)
    # smooth illumination gradient plus per-pixel noise
    gx, gy = rng.uniform(-12, 12, size=2)
    ramp = (np.linspace(-0.5, 0.5, w)[None, :] * gx + np.linspace(-0.5, 0.5, h)[:, None] * gy)[..., None]
    noise = rng.normal(0.0, cfg.noise_level, size=(h, w, 3))
    return base + ramp + noise


def _paint(img: np.ndarray, fp, color: np.ndarray, rng) -> None:
    ys, xs, cover = fp[2]
    tex = color + rng.normal(0.0, 4.0, size=(ys.size, 3))
    c = cover[:, None]
    img[ys, xs] = img[ys, xs] * (1 - c) + tex * c


def synth_generate(cfg: SynthConfig, index: int = 0) -> SynthSample:
    """Render one image, its rod mask and the list of placed objects."""
    rng = image_rng(cfg.seed, index)
    h, w = cfg.height, cfg.width
    img = _background(rng, cfg)
    mask = np.zeros((h, w), dtype=bool)
    occupied = np.zeros((h, w), dtype=bool)
    objects = []
    n_rods = int(rng.integers(cfg.bacilli[0], cfg.bacilli[1] + 1))
    n_blobs = int(rng.integers(cfg.distractors[0], cfg.distractors[1] + 1))
    rod_color = np.array(cfg.rod_rgb, dtype=np.float64)

    def reserve(ys, xs):
        # keep a 2-pixel gap between objects so they never merge
        y0, y1 = max(ys.min() - 2, 0), min(ys.max() + 2, h - 1)
        x0, x1 = max(xs.min() - 2, 0), min(xs.max() + 2, w - 1)
        sub = np.zeros((y1 - y0 + 1, x1 - x0 + 1), dtype=bool)
        sub[ys - y0, xs - x0] = True
        occupied[y0 : y1 + 1, x0 : x1 + 1] |= binary_dilation(sub, iterations=2)

    for _ in range(n_blobs):
        radius = rng.uniform(*cfg.distractor_radius) * cfg.scale()
        ext = radius + 1
        fp = _place(
            rng, cfg, ext, occupied,
            lambda cx, cy: _stamp(cx, cy, ext, lambda dx, dy: np.hypot(dx, dy) - radius, h, w, cfg.antialias),
        )
        if fp is None:
            continue
        color = rod_color + rng.uniform(-cfg.color_jitter, cfg.color_jitter, size=3)
        _paint(img, fp, color, rng)
        ys, xs = fp[0], fp[1]
        reserve(ys, xs)
        objects.append(SynthObject("distractor", (int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max())), int(ys.size)))

    for _ in range(n_rods):
        pts, r, ext = _rod_footprint(rng, cfg)
        fp = _place(
            rng, cfg, ext, occupied,
            lambda cx, cy: _stamp(cx, cy, ext, lambda dx, dy: _segment_distance(dx, dy, pts) - r, h, w, cfg.antialias),
        )
        if fp is None:
            continue
        color = rod_color + rng.uniform(-cfg.color_jitter, cfg.color_jitter, size=3)
        _paint(img, fp, color, rng)
        ys, xs = fp[0], fp[1]
        mask[ys, xs] = True
        reserve(ys, xs)
        objects.append(SynthObject("bacillus", (int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max())), int(ys.size)))

    image = np.clip(np.floor(img + 0.5), 0, 255).astype(np.uint8)
    return SynthSample(image, mask, objects)


def synth_dataset(cfg: SynthConfig, count: int, start: int = 0) -> list[SynthSample]:
    return [synth_generate(cfg, start + i) for i in range(count)]
