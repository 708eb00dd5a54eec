"""Image/mask pairs on disk and the JSON manifest that lists them.

Manifest schema (version 1)::

    {
      "version": 1,
      "root": ".",                 # relative to the manifest file
      "patch_side": 64,
      "provenance": "free text",
      "samples": [{"image": "img/0000.png", "mask": "mask/0000.png",
                   "split": "train" | "test"}, ...]
    }

Images are 8-bit RGB PNGs; masks are single-channel PNGs where any nonzero
pixel counts as foreground (written as 0/255).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

MANIFEST_VERSION = 1
SPLITS = ("train", "test")


class DatasetError(Exception):
    pass


@dataclass
class SampleRecord:
    image: str
    mask: str
    split: str = "train"


@dataclass
class DatasetManifest:
    root: Path
    samples: list[SampleRecord]
    patch_side: int = 64
    provenance: str = ""
    extra: dict = field(default_factory=dict)


@dataclass
class Sample:
    image: np.ndarray
    mask: np.ndarray
    split: str
    image_path: Path
    mask_path: Path


def read_image(path) -> np.ndarray:
    path = Path(path)
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()
    except FileNotFoundError as exc:
        raise DatasetError(f"missing image file {path}") from exc


def read_mask(path) -> np.ndarray:
    path = Path(path)
    try:
        with Image.open(path) as im:
            arr = np.asarray(im)
    except FileNotFoundError as exc:
        raise DatasetError(f"missing mask file {path}") from exc
    if arr.ndim == 3:
        arr = arr.max(axis=2)
    return arr != 0


def write_image(path, image: np.ndarray) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.asarray(image, dtype=np.uint8), mode="RGB").save(path)


def write_mask(path, mask: np.ndarray) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.where(mask, 255, 0).astype(np.uint8), mode="L").save(path)


def read_manifest(path) -> DatasetManifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise DatasetError(f"manifest not found: {path}") from exc
    if doc.get("version") != MANIFEST_VERSION:
        raise DatasetError(f"unsupported manifest version {doc.get('version')!r} in {path}")
    samples = []
    for i, s in enumerate(doc.get("samples", [])):
        if s.get("split", "train") not in SPLITS:
            raise DatasetError(f"sample {i} in {path} has unknown split {s.get('split')!r}")
        samples.append(SampleRecord(s["image"], s["mask"], s.get("split", "train")))
    root = (path.parent / doc.get("root", ".")).resolve()
    extra = {k: v for k, v in doc.items() if k not in ("version", "root", "samples", "patch_side", "provenance")}
    return DatasetManifest(root, samples, int(doc.get("patch_side", 64)), doc.get("provenance", ""), extra)


def write_manifest(path, samples: Sequence[SampleRecord], patch_side: int = 64, provenance: str = "", **extra) -> Path:
    path = Path(path)
    doc = {
        "version": MANIFEST_VERSION,
        "root": ".",
        "patch_side": patch_side,
        "provenance": provenance,
        "samples": [{"image": s.image, "mask": s.mask, "split": s.split} for s in samples],
        **extra,
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2) + "\n")
    return path


def load_dataset(manifest, split: str | None = None) -> list[Sample]:
    """Load and dimension-check every sample (optionally one split only)."""
    if not isinstance(manifest, DatasetManifest):
        manifest = read_manifest(manifest)
    out = []
    for rec in manifest.samples:
        if split is not None and rec.split != split:
            continue
        ip, mp = manifest.root / rec.image, manifest.root / rec.mask
        image, mask = read_image(ip), read_mask(mp)
        if image.shape[:2] != mask.shape:
            raise DatasetError(
                f"dimension mismatch: image {ip} is {image.shape[1]}x{image.shape[0]}, "
                f"mask {mp} is {mask.shape[1]}x{mask.shape[0]}"
            )
        out.append(Sample(image, mask, rec.split, ip, mp))
    return out
