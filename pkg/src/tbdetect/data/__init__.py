from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .dataset import DatasetError, DatasetManifest, Sample, SampleRecord, load_dataset, read_manifest, write_manifest
from .reports import EpochLog, export_report, read_epoch_logs, write_epoch_logs
from .synth import SynthConfig, SynthSample, synth_dataset, synth_generate

__all__ = [
    "CheckpointError",
    "DatasetError",
    "DatasetManifest",
    "EpochLog",
    "Sample",
    "SampleRecord",
    "SynthConfig",
    "SynthSample",
    "export_report",
    "load_checkpoint",
    "load_dataset",
    "read_epoch_logs",
    "read_manifest",
    "save_checkpoint",
    "synth_dataset",
    "synth_generate",
    "write_epoch_logs",
    "write_manifest",
]
