"""Seeded end-to-end run on synthetic smears: train both stages, evaluate on a
held-out synthetic test set, and compare against the Otsu baseline.

Everything written to ``out_dir`` is a pure function of the config and seed,
so two runs can be compared byte for byte.  Wall-clock time is returned but
never written to disk.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import PipelineConfig
from .data.reports import export_report
from .data.synth import synth_dataset
from .imaging import crop_to_grid, otsu_threshold
from .metrics import ConfusionCounts, DetReport, SegScores, match_rois_to_truth, seg_scores
from .pipeline import classify_rois, detect
from .training import TrainConfig, build_balanced_roi_set, patch_dataset, train_classifier, train_segmenter
from .unet import UNetConfig
from .vit import ViTConfig

log = logging.getLogger(__name__)

TEST_INDEX_OFFSET = 100_000  # test images come from a disjoint index range


def desk_config(seed: int = 0) -> PipelineConfig:
    """Settings sized for a single laptop core (a few minutes end to end)."""
    cfg = PipelineConfig()
    cfg.unet = UNetConfig(base_channels=8, depth=3, patch_side=64, output_prior=0.01)
    cfg.vit = ViTConfig()
    cfg.seg_train = TrainConfig(epochs=10, batch_size=16, learning_rate=2e-3, empty_patch_keep=0.25, seed=seed)
    cfg.cls_train = TrainConfig(epochs=25, batch_size=32, learning_rate=1e-3, seed=seed)
    cfg.synth = dataclasses.replace(cfg.synth, seed=seed)
    cfg.detect.patch_side = 64
    return cfg.validate()


@dataclass
class ExperimentResult:
    seg_dice: float
    seg_jaccard: float
    otsu_dice: float
    otsu_jaccard: float
    detection: DetReport
    seg_best_epoch: int
    cls_best_epoch: int
    runtime_s: float
    files: dict = field(default_factory=dict)

    def summary(self) -> dict:
        return {
            "seg_dice": self.seg_dice,
            "seg_jaccard": self.seg_jaccard,
            "otsu_dice": self.otsu_dice,
            "otsu_jaccard": self.otsu_jaccard,
            "detection_f1": self.detection.f1,
            "detection_counts": dataclasses.asdict(self.detection.counts),
            "seg_best_epoch": self.seg_best_epoch,
            "cls_best_epoch": self.cls_best_epoch,
        }


def _pooled(pred_masks, truth_masks) -> SegScores:
    # pixel counts summed over the whole test set
    inter = sum(int(np.count_nonzero(p & t)) for p, t in zip(pred_masks, truth_masks))
    sp = sum(int(np.count_nonzero(p)) for p in pred_masks)
    st = sum(int(np.count_nonzero(t)) for t in truth_masks)
    union = sp + st - inter
    return SegScores(1.0 if union == 0 else inter / union, 1.0 if sp + st == 0 else 2 * inter / (sp + st))


def run_synthetic_experiment(out_dir, cfg: PipelineConfig | None = None, seed: int = 0, n_train: int = 40, n_test: int = 10) -> ExperimentResult:
    t0 = time.perf_counter()
    cfg = cfg or desk_config(seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    p = cfg.detect.patch_side

    train = synth_dataset(cfg.synth, n_train)
    test = synth_dataset(cfg.synth, n_test, start=TEST_INDEX_OFFSET)

    x, y = patch_dataset([s.image for s in train], [s.mask for s in train], p)
    seg = train_segmenter(
        x, y, cfg.seg_train, cfg.unet, checkpoint_dir=out / "segmenter", log_path=out / "seg_epochs.csv"
    )
    del x, y

    negatives = [s.distractor_boxes for s in train] if cfg.classifier.use_distractor_negatives else None
    rois = build_balanced_roi_set(
        [s.image for s in train],
        [s.mask for s in train],
        min_area=cfg.detect.effective_min_area(),
        seed=seed,
        max_overlap=cfg.classifier.max_overlap,
        candidate_negatives=negatives,
    )
    cls = train_classifier(
        rois,
        cfg.cls_train,
        cfg.vit,
        gamma=cfg.classifier.gamma,
        checkpoint_dir=out / "classifier",
        log_path=out / "cls_epochs.csv",
    )

    seg_items, otsu_items, per_image = [], [], []
    preds, otsus, truths = [], [], []
    counts = ConfusionCounts()
    for k, s in enumerate(test):
        name = f"test_{k:03d}"
        det = detect(s.image, seg.model, None, cfg.detect)
        classify_rois(det.rois, cls.model)
        truth = crop_to_grid(s.mask, det.grid)
        c = match_rois_to_truth(det.rois, truth, cfg.detect.overlap_threshold, cfg.detect.connectivity)
        counts = counts + c
        per_image.append({"image": name, **dataclasses.asdict(c)})
        _, om = otsu_threshold(crop_to_grid(s.image, det.grid))
        preds.append(det.mask)
        otsus.append(om)
        truths.append(truth)
        seg_items.append((name, seg_scores(det.mask, truth)))
        otsu_items.append((name, seg_scores(om, truth)))

    seg_pooled, otsu_pooled = _pooled(preds, truths), _pooled(otsus, truths)
    report = DetReport.from_counts(counts, per_image)
    files = {
        "segmenter": str(seg.checkpoint),
        "classifier": str(cls.checkpoint),
        "seg_epochs": str(out / "seg_epochs.csv"),
        "cls_epochs": str(out / "cls_epochs.csv"),
    }
    extra = {"config": cfg.to_dict(), "seed": seed}
    files["detection"] = str(export_report(report, out, "detection", extra)[0])
    files["segmentation"] = str(
        export_report(seg_items, out, "segmentation", {"pooled": dataclasses.asdict(seg_pooled)})[0]
    )
    files["otsu"] = str(export_report(otsu_items, out, "otsu", {"pooled": dataclasses.asdict(otsu_pooled)})[0])
    result = ExperimentResult(
        seg_pooled.dice,
        seg_pooled.jaccard,
        otsu_pooled.dice,
        otsu_pooled.jaccard,
        report,
        seg.best_epoch,
        cls.best_epoch,
        time.perf_counter() - t0,
        files,
    )
    (out / "summary.json").write_text(json.dumps(result.summary(), indent=2) + "\n")
    log.info("experiment summary: %s (%.1fs)", result.summary(), result.runtime_s)
    return result
