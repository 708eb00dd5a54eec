"""Checkpoint directories: ``manifest.json`` plus a little-endian float32 ``weights.bin``.

Manifest schema (format_version 1)::

    {
      "format_version": 1,
      "kind": "segmenter" | "classifier",
      "config": {...model config fields...},
      "dtype": "<f4",
      "parameters": [{"name", "shape", "offset", "nbytes", "trainable"}, ...],
      "checksum": "sha256:<hex of weights.bin>"
    }

Offsets are contiguous, in model parameter order.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from ..unet import AttentionResUNet, UNetConfig
from ..vit import TBViT, ViTConfig

FORMAT_VERSION = 1
MANIFEST = "manifest.json"
WEIGHTS = "weights.bin"


class CheckpointError(Exception):
    """A checkpoint could not be written or was refused on load."""


def model_kind(model) -> str:
    if isinstance(model, AttentionResUNet):
        return "segmenter"
    if isinstance(model, TBViT):
        return "classifier"
    raise CheckpointError(f"unsupported model type {type(model).__name__}")


def build_model(kind: str, config: dict):
    try:
        if kind == "segmenter":
            return AttentionResUNet(UNetConfig(**config))
        if kind == "classifier":
            return TBViT(ViTConfig(**config))
    except TypeError as exc:
        raise CheckpointError(f"bad {kind} config: {exc}") from exc
    raise CheckpointError(f"unknown model kind {kind!r}")


def _blob(model) -> tuple[bytes, list[dict]]:
    entries, chunks, offset = [], [], 0
    for p in model.named_parameters():
        arr = p.tensor.data
        if not np.all(np.isfinite(arr)):
            raise CheckpointError(f"parameter {p.name} has non-finite values")
        raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        entries.append(
            {"name": p.name, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw), "trainable": p.trainable}
        )
        chunks.append(raw)
        offset += len(raw)
    return b"".join(chunks), entries


def save_checkpoint(model, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    blob, entries = _blob(model)
    manifest = {
        "format_version": FORMAT_VERSION,
        "kind": model_kind(model),
        "config": model.config.to_dict(),
        "dtype": "<f4",
        "parameters": entries,
        "checksum": "sha256:" + hashlib.sha256(blob).hexdigest(),
    }
    (directory / WEIGHTS).write_bytes(blob)
    (directory / MANIFEST).write_text(json.dumps(manifest, indent=2) + "\n")
    return directory


def read_manifest(directory) -> dict:
    path = Path(directory) / MANIFEST
    try:
        return json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise CheckpointError(f"no manifest at {path}") from exc
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"unreadable manifest {path}: {exc}") from exc


def load_checkpoint(directory, expected_kind: str | None = None):
    directory = Path(directory)
    manifest = read_manifest(directory)
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"format version {manifest.get('format_version')!r} not supported (expected {FORMAT_VERSION})"
        )
    kind = manifest.get("kind")
    if expected_kind is not None and kind != expected_kind:
        raise CheckpointError(f"checkpoint holds a {kind}, expected a {expected_kind}")
    try:
        blob = (directory / WEIGHTS).read_bytes()
    except FileNotFoundError as exc:
        raise CheckpointError(f"missing {WEIGHTS} in {directory}") from exc
    digest = "sha256:" + hashlib.sha256(blob).hexdigest()
    if digest != manifest.get("checksum"):
        raise CheckpointError(f"checksum mismatch for {directory / WEIGHTS}")
    model = build_model(kind, manifest["config"])
    params = {p.name: p for p in model.named_parameters()}
    declared = [e["name"] for e in manifest["parameters"]]
    if declared != list(params):
        raise CheckpointError("parameter names in manifest do not match the model built from its config")
    expected_offset = 0
    for e in manifest["parameters"]:
        p = params[e["name"]]
        shape = tuple(e["shape"])
        if shape != p.tensor.shape:
            raise CheckpointError(f"shape mismatch for {e['name']}: manifest {shape}, config implies {p.tensor.shape}")
        nbytes = 4 * int(np.prod(shape, dtype=np.int64))
        if e["offset"] != expected_offset or e["nbytes"] != nbytes:
            raise CheckpointError(f"bad offset/size for {e['name']}")
        if e["offset"] + nbytes > len(blob):
            raise CheckpointError(f"weights blob too short for {e['name']}")
        p.tensor.data = np.frombuffer(blob, dtype="<f4", count=nbytes // 4, offset=e["offset"]).astype(np.float32).reshape(shape)
        expected_offset += nbytes
    if expected_offset != len(blob):
        raise CheckpointError("weights blob has trailing bytes")
    return model
