"""Two-stage tuberculosis bacilli detection on bright-field smear images.

Stage one tiles an image into square patches and segments them with an
attention residual U-Net; stage two cuts regions of interest from the
reassembled mask and labels each with a small vision transformer.  All
models run on the self-contained numpy autodiff core in
:mod:`tbdetect.autograd`.
"""

from .config import PipelineConfig, load_config
from .data import SynthConfig, load_checkpoint, save_checkpoint, synth_dataset, synth_generate
from .imaging import (
    connected_components,
    extract_rois,
    filter_regions_by_area,
    otsu_threshold,
    reassemble_mask,
    scaled_min_area,
    split_into_patches,
)
from .metrics import ConfusionCounts, DetReport, dice, jaccard, match_rois_to_truth, rates
from .pipeline import DetectConfig, detect, segment_image
from .training import TrainConfig, train_classifier, train_segmenter
from .unet import AttentionResUNet, UNetConfig
from .vit import TBViT, ViTConfig

__version__ = "0.1.0"

__all__ = [
    "AttentionResUNet",
    "ConfusionCounts",
    "DetReport",
    "DetectConfig",
    "PipelineConfig",
    "SynthConfig",
    "TBViT",
    "TrainConfig",
    "UNetConfig",
    "ViTConfig",
    "connected_components",
    "detect",
    "dice",
    "extract_rois",
    "filter_regions_by_area",
    "jaccard",
    "load_checkpoint",
    "load_config",
    "match_rois_to_truth",
    "otsu_threshold",
    "rates",
    "reassemble_mask",
    "save_checkpoint",
    "scaled_min_area",
    "segment_image",
    "split_into_patches",
    "synth_dataset",
    "synth_generate",
    "train_classifier",
    "train_segmenter",
]
