"""Top-level pipeline configuration, loaded from JSON.

Every section is optional; missing keys take the dataclass defaults.  Unknown
sections or keys are rejected so typos fail loudly instead of being ignored.

Example::

    {
      "unet": {"base_channels": 8},
      "seg_train": {"epochs": 10, "learning_rate": 0.002},
      "detect": {"patch_side": 64, "threshold": 0.5}
    }
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .autograd import ContractViolation
from .data.synth import SynthConfig
from .pipeline import DetectConfig
from .training import TrainConfig
from .unet import UNetConfig
from .vit import ViTConfig


class ConfigError(ValueError):
    pass


@dataclass
class ClassifierTrainConfig:
    """ROI-set construction and loss settings for the classifier stage."""

    gamma: float = 2.0
    max_overlap: float = 0.1
    use_distractor_negatives: bool = True


@dataclass
class PipelineConfig:
    unet: UNetConfig = field(default_factory=UNetConfig)
    vit: ViTConfig = field(default_factory=ViTConfig)
    seg_train: TrainConfig = field(default_factory=TrainConfig)
    cls_train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=25, batch_size=32))
    classifier: ClassifierTrainConfig = field(default_factory=ClassifierTrainConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    detect: DetectConfig = field(default_factory=DetectConfig)

    def validate(self) -> "PipelineConfig":
        try:
            self.unet.validate()
            self.vit.validate()
            self.seg_train.validate()
            self.cls_train.validate()
        except ContractViolation as exc:
            raise ConfigError(str(exc)) from exc
        d = self.detect
        if d.patch_side < 1:
            raise ConfigError("detect.patch_side must be >= 1")
        if not 0.0 <= d.threshold <= 1.0:
            raise ConfigError("detect.threshold must lie in [0, 1]")
        if d.connectivity not in (4, 8):
            raise ConfigError("detect.connectivity must be 4 or 8")
        if d.min_area is not None and d.min_area < 0:
            raise ConfigError("detect.min_area must be >= 0")
        if d.threads < 1:
            raise ConfigError("detect.threads must be >= 1")
        if self.classifier.gamma < 0:
            raise ConfigError("classifier.gamma must be >= 0")
        if d.patch_side != self.unet.patch_side:
            raise ConfigError(
                f"detect.patch_side {d.patch_side} differs from unet.patch_side {self.unet.patch_side}"
            )
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _build(cls, doc, where: str):
    if not isinstance(doc, dict):
        raise ConfigError(f"{where} must be an object")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(doc) - set(names))
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    kwargs = {}
    for k, v in doc.items():
        default = getattr(cls(), k)
        if isinstance(default, tuple) and isinstance(v, list):
            v = tuple(v)
        kwargs[k] = v
    return cls(**kwargs)


_SECTIONS = {
    "unet": UNetConfig,
    "vit": ViTConfig,
    "seg_train": TrainConfig,
    "cls_train": TrainConfig,
    "classifier": ClassifierTrainConfig,
    "synth": SynthConfig,
    "detect": DetectConfig,
}


def config_from_dict(doc: dict) -> PipelineConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config root must be an object")
    unknown = sorted(set(doc) - set(_SECTIONS))
    if unknown:
        raise ConfigError(f"unknown config section(s): {', '.join(unknown)}")
    cfg = PipelineConfig()
    for name, cls in _SECTIONS.items():
        if name in doc:
            setattr(cfg, name, _build(cls, doc[name], name))
    return cfg.validate()


def load_config(path) -> PipelineConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return config_from_dict(doc)
