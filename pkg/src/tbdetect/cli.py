"""Command-line entry point: ``tbdetect <subcommand> [flags]``.

Exit status is 0 on success, 2 on bad usage and 1 on any runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, PipelineConfig, load_config
from .data.checkpoint import load_checkpoint
from .data.dataset import SampleRecord, load_dataset, read_image, read_mask, write_image, write_manifest, write_mask
from .data.reports import export_report
from .data.synth import synth_generate
from .imaging import crop_to_grid, otsu_threshold, overlay_render, patch_grid
from .metrics import ConfusionCounts, DetReport, match_rois_to_truth, seg_scores
from .pipeline import DetectConfig, classify_rois, detect, segment_image
from .training import build_balanced_roi_set, patch_dataset, train_classifier, train_segmenter

log = logging.getLogger("tbdetect")


class UsageError(Exception):
    pass


# -- helpers -------------------------------------------------------------------
def _config(args) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    if args.seed is not None:
        cfg.synth = dataclasses.replace(cfg.synth, seed=args.seed)
        cfg.seg_train.seed = args.seed
        cfg.cls_train.seed = args.seed
    d = cfg.detect
    if getattr(args, "patch_side", None) is not None:
        d.patch_side = args.patch_side
        cfg.unet.patch_side = args.patch_side
    if getattr(args, "min_area", None) is not None:
        d.min_area = args.min_area
    if getattr(args, "threshold", None) is not None:
        d.threshold = args.threshold
    if getattr(args, "threads", None) is not None:
        d.threads = args.threads
    return cfg.validate()


def _require(args, *names):
    missing = [f"--{n.replace('_', '-')}" for n in names if getattr(args, n, None) is None]
    if missing:
        raise UsageError(f"{args.command} requires {', '.join(missing)}")


def _detect_cfg(cfg: PipelineConfig, seg_model, args) -> DetectConfig:
    # the checkpoint's own patch side wins unless one was given explicitly
    d = dataclasses.replace(cfg.detect)
    if getattr(args, "patch_side", None) is None:
        d.patch_side = seg_model.config.patch_side
    return d


def _train_split(args):
    samples = load_dataset(args.data, "train")
    if not samples:
        raise RuntimeError(f"{args.data} has no training samples")
    return samples


def _test_split(args):
    samples = load_dataset(args.data, "test")
    if not samples:
        raise RuntimeError(f"{args.data} has no test samples")
    return samples


def _print(doc) -> None:
    print(json.dumps(doc, indent=2))


# -- subcommands ---------------------------------------------------------------
def cmd_synth_gen(args, cfg: PipelineConfig) -> int:
    _require(args, "out")
    out = Path(args.out)
    records = []
    for split, count, start in (("train", args.count, 0), ("test", args.test_count, args.count)):
        for i in range(start, start + count):
            s = synth_generate(cfg.synth, i)
            img, msk = f"images/{i:04d}.png", f"masks/{i:04d}.png"
            write_image(out / img, s.image)
            write_mask(out / msk, s.mask)
            records.append(SampleRecord(img, msk, split))
    path = write_manifest(
        out / "manifest.json",
        records,
        cfg.detect.patch_side,
        f"synthetic, seed {cfg.synth.seed}",
        synth=cfg.synth.to_dict(),
    )
    print(f"wrote {len(records)} samples, manifest {path}")
    return 0


def cmd_train_seg(args, cfg: PipelineConfig) -> int:
    _require(args, "data", "out")
    samples = _train_split(args)
    x, y = patch_dataset([s.image for s in samples], [s.mask for s in samples], cfg.unet.patch_side)
    out = Path(args.out)
    res = train_segmenter(x, y, cfg.seg_train, cfg.unet, checkpoint_dir=out, log_path=out / "epochs.csv")
    print(f"best val loss {-res.best_metric:.5f} at epoch {res.best_epoch}; checkpoint {res.checkpoint}")
    return 0


def cmd_train_cls(args, cfg: PipelineConfig) -> int:
    _require(args, "data", "out")
    samples = _train_split(args)
    ds = build_balanced_roi_set(
        [s.image for s in samples],
        [s.mask for s in samples],
        min_area=cfg.detect.effective_min_area(),
        seed=cfg.cls_train.seed,
        max_overlap=cfg.classifier.max_overlap,
        names=[str(s.image_path) for s in samples],
    )
    out = Path(args.out)
    res = train_classifier(ds, cfg.cls_train, cfg.vit, cfg.classifier.gamma, checkpoint_dir=out, log_path=out / "epochs.csv")
    print(f"{len(ds)} ROIs {ds.counts()}; best epoch {res.best_epoch}; class weights {res.class_weights}; checkpoint {res.checkpoint}")
    return 0


def cmd_segment(args, cfg: PipelineConfig) -> int:
    _require(args, "model", "image", "out")
    model = load_checkpoint(args.model, "segmenter")
    d = _detect_cfg(cfg, model, args)
    image = read_image(args.image)
    prob, mask, grid = segment_image(image, model, d.patch_side, d.threshold, d.batch_size, d.threads)
    out = Path(args.out)
    write_mask(out / "mask.png", mask)
    np.save(out / "probability.npy", prob)
    print(f"{grid.count} patches, {int(mask.sum())} foreground pixels; wrote {out / 'mask.png'}")
    return 0


def _roi_doc(roi) -> dict:
    return {
        "region_id": roi.region_id,
        "bbox": list(roi.bbox),
        "area": roi.region.area if roi.region is not None else None,
        "score": roi.score,
        "predicted_label": roi.predicted_label,
        "truth_label": roi.truth_label,
    }


def cmd_detect(args, cfg: PipelineConfig) -> int:
    _require(args, "seg_model", "cls_model", "image", "out")
    seg = load_checkpoint(args.seg_model, "segmenter")
    cls = load_checkpoint(args.cls_model, "classifier")
    d = _detect_cfg(cfg, seg, args)
    image = read_image(args.image)
    det = detect(image, seg, cls, d)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_mask(out / "mask.png", det.mask)
    write_image(out / "overlay.png", overlay_render(crop_to_grid(image, det.grid), det.rois))
    doc = {
        "image": str(args.image),
        "patches": det.grid.count,
        "covered_shape": list(det.grid.covered_shape),
        "min_area": d.effective_min_area(),
        "config": dataclasses.asdict(d),
        "rois": [_roi_doc(r) for r in det.rois],
        "bacilli": sum(1 for r in det.rois if r.predicted_label == 1),
    }
    (out / "report.json").write_text(json.dumps(doc, indent=2) + "\n")
    print(f"{len(det.rois)} ROIs, {doc['bacilli']} classified as bacilli; wrote {out / 'report.json'}")
    return 0


def cmd_eval_seg(args, cfg: PipelineConfig) -> int:
    if args.pred is not None or args.truth is not None:
        _require(args, "pred", "truth")
        pred, truth = read_mask(args.pred), read_mask(args.truth)
        if pred.shape != truth.shape:
            raise RuntimeError(f"mask dimensions differ: {args.pred} {pred.shape} vs {args.truth} {truth.shape}")
        s = seg_scores(pred, truth)
        print(f"jaccard={s.jaccard} dice={s.dice}")
        items = [(Path(args.pred).name, s)]
    else:
        _require(args, "model", "data")
        model = load_checkpoint(args.model, "segmenter")
        d = _detect_cfg(cfg, model, args)
        items = []
        for s in _test_split(args):
            _, mask, grid = segment_image(s.image, model, d.patch_side, d.threshold, d.batch_size, d.threads)
            sc = seg_scores(mask, crop_to_grid(s.mask, grid))
            items.append((s.image_path.name, sc))
            print(f"{s.image_path.name}: jaccard={sc.jaccard} dice={sc.dice}")
    if args.out:
        export_report(items, args.out, "segmentation")
    return 0


def cmd_eval_det(args, cfg: PipelineConfig) -> int:
    _require(args, "seg_model", "cls_model", "data")
    seg = load_checkpoint(args.seg_model, "segmenter")
    cls = load_checkpoint(args.cls_model, "classifier")
    d = _detect_cfg(cfg, seg, args)
    total, per_image = ConfusionCounts(), []
    for s in _test_split(args):
        det = detect(s.image, seg, cls, d)
        c = match_rois_to_truth(det.rois, crop_to_grid(s.mask, det.grid), d.overlap_threshold, d.connectivity)
        total = total + c
        per_image.append({"image": s.image_path.name, **dataclasses.asdict(c)})
    rep = DetReport.from_counts(total, per_image)
    _print({k: v for k, v in rep.to_dict().items() if k != "per_image"})
    if args.out:
        export_report(rep, args.out, "detection", {"config": dataclasses.asdict(d)})
    return 0


def cmd_baseline_otsu(args, cfg: PipelineConfig) -> int:
    if args.image is not None:
        _require(args, "out")
        t, mask = otsu_threshold(read_image(args.image))
        write_mask(Path(args.out) / "otsu_mask.png", mask)
        print(f"threshold={t} foreground={int(mask.sum())}")
        return 0
    _require(args, "data")
    items = []
    p = cfg.detect.patch_side
    for s in _test_split(args):
        grid = patch_grid(s.image.shape[1], s.image.shape[0], p)
        _, mask = otsu_threshold(crop_to_grid(s.image, grid))
        sc = seg_scores(mask, crop_to_grid(s.mask, grid))
        items.append((s.image_path.name, sc))
        print(f"{s.image_path.name}: jaccard={sc.jaccard} dice={sc.dice}")
    if args.out:
        export_report(items, args.out, "otsu")
    return 0


def cmd_gradcheck(args, cfg: PipelineConfig) -> int:
    from .gradsuite import run_suite

    base = 0 if args.seed is None else args.seed
    failed = []

    def show(r):
        if not r.passed:
            failed.append(r)
        if args.verbose or not r.passed:
            print(f"{'PASS' if r.passed else 'FAIL'} {r.name} seed={r.seed} max_rel_error={r.max_rel_error:.3e}")

    results, elapsed = run_suite(range(base, base + args.seeds), progress=show)
    print(f"{len(results) - len(failed)}/{len(results)} checks passed in {elapsed:.1f}s")
    return 1 if failed else 0


def cmd_run_synthetic(args, cfg: PipelineConfig) -> int:
    from .experiment import desk_config, run_synthetic_experiment

    _require(args, "out")
    seed = 0 if args.seed is None else args.seed
    run_cfg = _config(args) if args.config else desk_config(seed)
    res = run_synthetic_experiment(args.out, run_cfg, seed=seed, n_train=args.count, n_test=args.test_count)
    _print({**res.summary(), "runtime_s": round(res.runtime_s, 1)})
    return 0


COMMANDS = {
    "synth-gen": (cmd_synth_gen, "generate a synthetic train/test set with a manifest"),
    "train-seg": (cmd_train_seg, "train the attention residual U-Net on a manifest's train split"),
    "train-cls": (cmd_train_cls, "train the ROI classifier on a manifest's train split"),
    "segment": (cmd_segment, "segment one image into a binary mask"),
    "detect": (cmd_detect, "full pipeline on one image: report JSON and overlay"),
    "eval-seg": (cmd_eval_seg, "Jaccard/Dice of masks or of a segmenter on a test split"),
    "eval-det": (cmd_eval_det, "detection accuracy/precision/recall/F1 on a test split"),
    "baseline-otsu": (cmd_baseline_otsu, "global Otsu thresholding baseline"),
    "gradcheck": (cmd_gradcheck, "finite-difference oracle suite; exit 0 iff all pass"),
    "run-synthetic": (cmd_run_synthetic, "seeded end-to-end synthetic experiment"),
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tbdetect", description="Two-stage TB bacilli detection")
    sub = ap.add_subparsers(dest="command", metavar="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", help="JSON pipeline config")
        p.add_argument("--seed", type=int, help="seed for all randomness")
        p.add_argument("--out", help="output directory")
        p.add_argument("-v", "--verbose", action="store_true", help="log progress")
        if name in ("segment", "eval-seg"):
            p.add_argument("--model", help="segmenter checkpoint directory")
        if name in ("detect", "eval-det"):
            p.add_argument("--seg-model", help="segmenter checkpoint directory")
            p.add_argument("--cls-model", help="classifier checkpoint directory")
        if name in ("segment", "detect", "baseline-otsu"):
            p.add_argument("--image", help="input RGB image")
        if name in ("train-seg", "train-cls", "eval-seg", "eval-det", "baseline-otsu"):
            p.add_argument("--data", help="dataset manifest JSON")
        if name in ("train-seg", "segment", "detect", "eval-seg", "eval-det", "baseline-otsu", "train-cls"):
            p.add_argument("--patch-side", type=int)
        if name in ("train-cls", "detect", "eval-det"):
            p.add_argument("--min-area", type=float, help="minimum region area (default scales with patch side)")
        if name in ("segment", "detect", "eval-seg", "eval-det"):
            p.add_argument("--threshold", type=float, help="probability cut-off")
            p.add_argument("--threads", type=int, help="worker threads for patch batches")
        if name == "eval-seg":
            p.add_argument("--pred", help="predicted mask")
            p.add_argument("--truth", help="ground-truth mask")
        if name in ("synth-gen", "run-synthetic"):
            p.add_argument("--count", type=int, default=40, help="training images")
            p.add_argument("--test-count", type=int, default=10, help="test images")
        if name == "gradcheck":
            p.add_argument("--seeds", type=int, default=20, help="number of seeds per case")
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    func = COMMANDS[args.command][0]
    try:
        cfg = _config(args)
        return func(args, cfg)
    except (UsageError, ConfigError) as exc:
        parser.print_usage(sys.stderr)
        print(f"tbdetect: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - report any runtime failure
        print(f"tbdetect: {args.command} failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
