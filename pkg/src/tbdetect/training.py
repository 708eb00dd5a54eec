"""Training loops for the segmenter and the ROI classifier, with callbacks."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .autograd import Adam, ContractViolation, Tensor, backward, make_rng, no_grad
from .data.checkpoint import save_checkpoint
from .data.reports import EpochLog, write_epoch_logs
from .imaging import connected_components, filter_regions_by_area, split_into_patches
from .losses import FocalLossConfig, adaptive_class_weights, binary_cross_entropy, focal_loss
from .unet import AttentionResUNet, UNetConfig
from .vit import TBViT, ViTConfig

log = logging.getLogger(__name__)


class TrainingError(Exception):
    pass


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 16
    learning_rate: float = 1e-3
    early_stop_patience: int = 3
    min_delta: float = 1e-4
    lr_factor: float = 0.5
    lr_patience: int = 2
    min_lr: float = 1e-5
    validation_fraction: float = 0.1
    empty_patch_keep: float = 1.0  # segmenter only: share of all-background patches kept
    seed: int = 0

    def validate(self) -> "TrainConfig":
        if self.epochs < 1:
            raise ContractViolation("epochs must be >= 1")
        if not 0.0 < self.validation_fraction < 1.0:
            raise ContractViolation("validation_fraction must lie in (0, 1)")
        if not 0.0 < self.lr_factor < 1.0:
            raise ContractViolation("lr_factor must lie in (0, 1)")
        if self.early_stop_patience < 1 or self.lr_patience < 1:
            raise ContractViolation("patience values must be >= 1")
        if self.batch_size < 1:
            raise ContractViolation("batch_size must be >= 1")
        if not 0.0 < self.empty_patch_keep <= 1.0:
            raise ContractViolation("empty_patch_keep must lie in (0, 1]")
        return self

    def to_dict(self) -> dict:
        return asdict(self)


# -- callbacks ---------------------------------------------------------------
@dataclass
class CallbackState:
    """Progress of a maximised validation metric."""

    best: Optional[float] = None
    wait: int = 0
    best_epoch: int = -1
    checkpoint_path: Optional[str] = None


class EarlyStopping:
    """Halt after ``patience`` consecutive epochs without an improvement of
    at least ``min_delta``."""

    def __init__(self, patience: int = 3, min_delta: float = 1e-4):
        if patience < 1:
            raise ContractViolation("patience must be >= 1")
        self.patience, self.min_delta = patience, min_delta
        self.state = CallbackState()

    def __call__(self, metric: float) -> bool:
        return early_stopping(self.state, metric, self.patience, self.min_delta)


def early_stopping(state: CallbackState, metric: float, patience: int = 3, min_delta: float = 1e-4) -> bool:
    """Update ``state``; True means halt."""
    if state.best is None or metric >= state.best + min_delta:
        state.best = metric
        state.wait = 0
        return False
    state.wait += 1
    return state.wait >= patience


class ReduceLROnPlateau:
    def __init__(self, lr: float, factor: float = 0.5, patience: int = 2, min_lr: float = 1e-5, min_delta: float = 1e-4):
        if not 0.0 < factor < 1.0:
            raise ContractViolation("factor must lie in (0, 1)")
        self.lr, self.factor, self.patience, self.min_lr, self.min_delta = lr, factor, patience, min_lr, min_delta
        self.state = CallbackState()

    def __call__(self, metric: float) -> float:
        self.lr = reduce_lr_on_plateau(self.state, metric, self.lr, self.factor, self.patience, self.min_lr, self.min_delta)
        return self.lr


def reduce_lr_on_plateau(
    state: CallbackState,
    metric: float,
    lr: float,
    factor: float = 0.5,
    patience: int = 2,
    min_lr: float = 1e-5,
    min_delta: float = 1e-4,
) -> float:
    """Return the learning rate for the next epoch."""
    if state.best is None or metric >= state.best + min_delta:
        state.best = metric
        state.wait = 0
        return lr
    state.wait += 1
    if state.wait >= patience:
        state.wait = 0
        return max(lr * factor, min_lr)
    return lr


@dataclass
class TrainResult:
    model: object
    logs: list[EpochLog]
    best_metric: float
    best_epoch: int
    checkpoint: Optional[Path] = None
    class_weights: Optional[tuple] = None


# -- shared loop ---------------------------------------------------------------
def _split_indices(n: int, fraction: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    perm = rng.permutation(n)
    n_val = max(1, int(round(n * fraction)))
    if n_val >= n:
        raise ContractViolation(f"need at least two samples to hold out validation data, got {n}")
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def _fit(model, x, y, cfg: TrainConfig, loss_fn, eval_fn, step_stats, checkpoint_dir=None, log_path=None, label="") -> TrainResult:
    rng = make_rng(cfg.seed)
    train_idx, val_idx = _split_indices(len(x), cfg.validation_fraction, rng)
    params = model.parameters()
    opt = Adam(params, lr=cfg.learning_rate)
    stopper = EarlyStopping(cfg.early_stop_patience, cfg.min_delta)
    plateau = ReduceLROnPlateau(cfg.learning_rate, cfg.lr_factor, cfg.lr_patience, cfg.min_lr, cfg.min_delta)
    best_metric, best_epoch, best_state = -np.inf, -1, None
    logs: list[EpochLog] = []
    step = 0
    for epoch in range(cfg.epochs):
        lr_used = opt.lr
        order = train_idx[rng.permutation(len(train_idx))]
        tot_loss = tot_correct = tot_count = 0.0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            xb, yb = x[idx], y[idx]
            opt.zero_grad()
            out = model(Tensor(xb), training=True, seed=cfg.seed * 100003 + step)
            loss = loss_fn(out, yb)
            backward(loss)
            opt.step()
            step += 1
            correct, count = step_stats(out.data, yb)
            tot_loss += loss.item() * len(idx)
            tot_correct += correct
            tot_count += count
        val_loss, val_acc, metric, *extra = eval_fn(model, x[val_idx], y[val_idx])
        entry = EpochLog(
            epoch + 1,
            float(tot_loss / len(train_idx)),
            float(tot_correct / tot_count),
            float(val_loss),
            float(val_acc),
            float(lr_used),
            float(metric),
            float(extra[0]) if extra else None,
        )
        logs.append(entry)
        log.info("%s epoch %d: %s", label, epoch + 1, entry)
        if metric > best_metric:
            best_metric, best_epoch = metric, epoch + 1
            best_state = {k: v.copy() for k, v in model.state_dict().items()}
        halt = stopper(metric)
        opt.lr = plateau(metric)
        if halt:
            break
    model.load_state_dict(best_state)
    ckpt = None
    if checkpoint_dir is not None:
        ckpt = save_checkpoint(model, checkpoint_dir)
    if log_path is not None:
        write_epoch_logs(log_path, logs)
    return TrainResult(model, logs, float(best_metric), best_epoch, ckpt)


def _batched(model, x: np.ndarray, batch: int) -> np.ndarray:
    outs = []
    with no_grad():
        for s in range(0, len(x), batch):
            outs.append(model(Tensor(x[s : s + batch]), training=False).data)
    return np.concatenate(outs, axis=0)


# -- segmenter ------------------------------------------------------------------
def image_to_array(image: np.ndarray) -> np.ndarray:
    """uint8 (H, W, 3) to float32 (3, H, W) in [0, 1]."""
    return np.ascontiguousarray(np.asarray(image, dtype=np.float32).transpose(2, 0, 1) / np.float32(255.0))


def patch_dataset(images: Sequence[np.ndarray], masks: Sequence[np.ndarray], patch_side: int) -> tuple[np.ndarray, np.ndarray]:
    xs, ys = [], []
    for img, m in zip(images, masks):
        ip, _ = split_into_patches(img, patch_side)
        mp, _ = split_into_patches(np.asarray(m, dtype=bool), patch_side)
        xs.extend(image_to_array(p) for p in ip)
        ys.extend(p[None].astype(np.float32) for p in mp)
    if not xs:
        raise ContractViolation("no training patches")
    return np.stack(xs), np.stack(ys)


def subsample_empty_patches(x: np.ndarray, y: np.ndarray, keep: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Keep every patch with foreground and a seeded ``keep`` share of the rest."""
    if keep >= 1.0:
        return x, y
    has_fg = y.reshape(len(y), -1).any(axis=1)
    # separate stream so the train/val split is unaffected
    draw = make_rng(seed + 0x5EED).random(len(y))
    sel = has_fg | (draw < keep)
    return x[sel], y[sel]


def _seg_stats(out: np.ndarray, y: np.ndarray) -> tuple[float, int]:
    return float(((out > 0.5) == (y > 0.5)).sum()), y.size


def train_segmenter(
    x: np.ndarray,
    y: np.ndarray,
    cfg: TrainConfig | None = None,
    unet_config: UNetConfig | None = None,
    model_seed: int | None = None,
    checkpoint_dir=None,
    log_path=None,
) -> TrainResult:
    """Fit the attention residual U-Net on patch/mask arrays ``[N,3,p,p]`` / ``[N,1,p,p]``.

    Loss is pixelwise BCE.  The monitored metric is the negated validation
    loss: pooled Jaccard sits at exactly 0 while the net still predicts all
    background, which would trip the plateau and stopping callbacks early.
    """
    cfg = (cfg or TrainConfig()).validate()
    if len(x) == 0:
        raise ContractViolation("empty segmentation dataset")
    unet_config = unet_config or UNetConfig(patch_side=x.shape[-1])
    if x.shape[1:] != (unet_config.in_channels, unet_config.patch_side, unet_config.patch_side):
        raise ContractViolation(f"patch shape {x.shape[1:]} does not match model config")
    x, y = subsample_empty_patches(x, y, cfg.empty_patch_keep, cfg.seed)
    model = AttentionResUNet(unet_config, seed=cfg.seed if model_seed is None else model_seed)

    def evaluate(m, xv, yv):
        p = _batched(m, xv, cfg.batch_size)
        with no_grad():
            vloss = binary_cross_entropy(Tensor(p), yv).item()
        pred, truth = p > 0.5, yv > 0.5
        union = np.count_nonzero(pred | truth)
        jac = 1.0 if union == 0 else np.count_nonzero(pred & truth) / union
        return vloss, float((pred == truth).mean()), -vloss, jac

    return _fit(model, x, y, cfg, binary_cross_entropy, evaluate, _seg_stats, checkpoint_dir, log_path, "seg")


# -- classifier -----------------------------------------------------------------
def resize_bilinear(image: np.ndarray, side: int) -> np.ndarray:
    """Resize (H, W, C) to (side, side, C) with half-pixel-centred bilinear sampling."""
    img = np.asarray(image, dtype=np.float32)
    h, w = img.shape[:2]

    def axis(n_in):
        pos = (np.arange(side, dtype=np.float64) + 0.5) * n_in / side - 0.5
        pos = np.clip(pos, 0, n_in - 1)
        lo = np.floor(pos).astype(np.int64)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, (pos - lo).astype(np.float32)

    y0, y1, fy = axis(h)
    x0, x1, fx = axis(w)
    top = img[y0][:, x0] * (1 - fx)[None, :, None] + img[y0][:, x1] * fx[None, :, None]
    bot = img[y1][:, x0] * (1 - fx)[None, :, None] + img[y1][:, x1] * fx[None, :, None]
    return top * (1 - fy)[:, None, None] + bot * fy[:, None, None]


def roi_batch(crops: Sequence[np.ndarray], roi_side: int) -> np.ndarray:
    return np.stack([resize_bilinear(c, roi_side).transpose(2, 0, 1) / np.float32(255.0) for c in crops]).astype(np.float32)


@dataclass
class ROIDataset:
    crops: list
    labels: np.ndarray
    sources: list = field(default_factory=list)  # (image index, bbox)

    def __len__(self) -> int:
        return len(self.crops)

    def counts(self) -> tuple[int, int]:
        return int((self.labels == 0).sum()), int((self.labels == 1).sum())


def _fg_fraction(mask: np.ndarray, bbox) -> float:
    x0, y0, x1, y1 = bbox
    return float(mask[y0 : y1 + 1, x0 : x1 + 1].mean())


def _sample_negative(mask: np.ndarray, hh: int, ww: int, rng, max_overlap: float, attempts: int):
    h, w = mask.shape
    if hh > h or ww > w:
        return None
    for _ in range(attempts):
        y0 = int(rng.integers(0, h - hh + 1))
        x0 = int(rng.integers(0, w - ww + 1))
        box = (x0, y0, x0 + ww - 1, y0 + hh - 1)
        if mask[y0 + hh // 2, x0 + ww // 2]:
            continue
        if _fg_fraction(mask, box) < max_overlap:
            return box
    return None


def build_balanced_roi_set(
    images: Sequence[np.ndarray],
    masks: Sequence[np.ndarray],
    min_area: float = 0.0,
    seed: int = 0,
    max_overlap: float = 0.1,
    candidate_negatives: Sequence[Sequence[tuple]] | None = None,
    names: Sequence[str] | None = None,
    attempts: int = 500,
) -> ROIDataset:
    """Truth components (area-filtered) as positives, plus an equal number of
    background crops per image.

    Negative crop sizes are drawn from that image's positive sizes.  Boxes in
    ``candidate_negatives[i]`` (e.g. known debris) are used first when they
    pass the overlap test; the rest are placed uniformly at random.  Every
    negative has under ``max_overlap`` foreground and a background centre pixel.
    """
    rng = make_rng(seed)
    crops, labels, sources = [], [], []
    for i, (img, m) in enumerate(zip(images, masks)):
        m = np.asarray(m, dtype=bool)
        regions = filter_regions_by_area(connected_components(m), min_area)
        sizes = []
        for r in regions:
            x0, y0, x1, y1 = r.bbox
            crops.append(img[y0 : y1 + 1, x0 : x1 + 1].copy())
            labels.append(1)
            sources.append((i, r.bbox))
            sizes.append((r.height, r.width))
        need = len(regions)
        for box in (candidate_negatives[i] if candidate_negatives else [])[:need]:
            x0, y0, x1, y1 = box
            cy, cx = (y0 + y1) // 2, (x0 + x1) // 2
            if m[cy, cx] or _fg_fraction(m, box) >= max_overlap:
                continue
            crops.append(img[y0 : y1 + 1, x0 : x1 + 1].copy())
            labels.append(0)
            sources.append((i, tuple(box)))
            need -= 1
        for _ in range(need):
            hh, ww = sizes[int(rng.integers(len(sizes)))]
            box = _sample_negative(m, hh, ww, rng, max_overlap, attempts)
            if box is None:
                name = names[i] if names else f"image {i}"
                raise TrainingError(f"not enough background to sample negatives in {name}")
            x0, y0, x1, y1 = box
            crops.append(img[y0 : y1 + 1, x0 : x1 + 1].copy())
            labels.append(0)
            sources.append((i, box))
    order = rng.permutation(len(crops))
    return ROIDataset([crops[j] for j in order], np.asarray(labels, dtype=np.int64)[order], [sources[j] for j in order])


def _cls_stats(out: np.ndarray, y: np.ndarray) -> tuple[float, int]:
    return float((out.argmax(axis=1) == y).sum()), len(y)


def train_classifier(
    dataset: ROIDataset,
    cfg: TrainConfig | None = None,
    vit_config: ViTConfig | None = None,
    gamma: float = 2.0,
    model_seed: int | None = None,
    checkpoint_dir=None,
    log_path=None,
) -> TrainResult:
    """Fit TBViT with focal loss and inverse-frequency class weights.

    The monitored metric is the negated validation focal loss.
    """
    cfg = (cfg or TrainConfig(epochs=25)).validate()
    vit_config = vit_config or ViTConfig()
    counts = dataset.counts()
    if min(counts) == 0:
        raise TrainingError(f"classifier needs both classes, got counts {counts}")
    focal = FocalLossConfig(gamma, adaptive_class_weights(counts))
    x = roi_batch(dataset.crops, vit_config.roi_side)
    y = dataset.labels
    model = TBViT(vit_config, seed=cfg.seed if model_seed is None else model_seed)

    def loss_fn(out, yb):
        return focal_loss(out, yb, focal)

    def evaluate(m, xv, yv):
        p = _batched(m, xv, cfg.batch_size)
        with no_grad():
            vloss = focal_loss(Tensor(p), yv, focal).item()
        return vloss, float((p.argmax(axis=1) == yv).mean()), -vloss

    result = _fit(model, x, y, cfg, loss_fn, evaluate, _cls_stats, checkpoint_dir, log_path, "cls")
    result.class_weights = focal.class_weights
    return result
