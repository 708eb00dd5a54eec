import numpy as np
import pytest

from tbdetect.autograd import ContractViolation
from tbdetect.data.reports import read_epoch_logs
from tbdetect.data.synth import SynthConfig, synth_dataset
from tbdetect.training import (
    CallbackState,
    EarlyStopping,
    ReduceLROnPlateau,
    ROIDataset,
    TrainConfig,
    TrainingError,
    build_balanced_roi_set,
    early_stopping,
    patch_dataset,
    reduce_lr_on_plateau,
    resize_bilinear,
    subsample_empty_patches,
    train_classifier,
    train_segmenter,
)
from tbdetect.unet import UNetConfig
from tbdetect.vit import ViTConfig


# -- callbacks -----------------------------------------------------------------
def test_strictly_improving_never_halts():
    stop = EarlyStopping(patience=1)
    assert not any(stop(m) for m in np.linspace(0, 1, 50))


def test_flat_sequence_halts_on_fourth_epoch():
    stop = EarlyStopping(patience=3)
    assert [stop(0.5) for _ in range(4)] == [False, False, False, True]


def test_sub_min_delta_improvement_is_not_improvement():
    st = CallbackState()
    early_stopping(st, 1.0, patience=2, min_delta=1e-4)
    assert not early_stopping(st, 1.00005, patience=2, min_delta=1e-4)
    assert early_stopping(st, 1.00009, patience=2, min_delta=1e-4)
    assert st.best == 1.0


def test_best_never_worsens():
    st = CallbackState()
    for m in [0.3, 0.5, 0.1, 0.4, 0.6, 0.2]:
        early_stopping(st, m, patience=100)
    assert st.best == 0.6


def test_lr_halves_once_after_three_flat_epochs():
    plateau = ReduceLROnPlateau(1e-3, factor=0.5, patience=2)
    lrs = [plateau(0.7) for _ in range(3)]
    assert lrs == [1e-3, 1e-3, 5e-4]


def test_lr_floor_and_improvement():
    st = CallbackState()
    lr = 1e-3
    lr = reduce_lr_on_plateau(st, 0.1, lr)
    assert lr == 1e-3
    for _ in range(100):
        lr = reduce_lr_on_plateau(st, 0.1, lr, 0.5, 2, 1e-5)
        assert lr >= 1e-5
    assert lr == 1e-5
    with pytest.raises(ContractViolation):
        ReduceLROnPlateau(1e-3, factor=1.5)
    with pytest.raises(ContractViolation):
        EarlyStopping(patience=0)


def test_train_config_validation():
    for bad in (dict(epochs=0), dict(validation_fraction=1.0), dict(lr_factor=0.0), dict(empty_patch_keep=0.0)):
        with pytest.raises(ContractViolation):
            TrainConfig(**bad).validate()


# -- segmenter ----------------------------------------------------------------
@pytest.fixture(scope="module")
def tiny_seg_data():
    samples = synth_dataset(SynthConfig(width=64, height=64, bacilli=(2, 4), seed=3), 6)
    return patch_dataset([s.image for s in samples], [s.mask for s in samples], 32)


def _seg(data, tmp, **kw):
    cfg = TrainConfig(epochs=3, batch_size=8, learning_rate=3e-3, seed=5, **kw)
    return train_segmenter(*data, cfg, UNetConfig(base_channels=4, depth=2, patch_side=32), checkpoint_dir=tmp / "ck", log_path=tmp / "log.csv")


def test_segmenter_logs_checkpoint_and_determinism(tiny_seg_data, tmp_path):
    a = _seg(tiny_seg_data, tmp_path / "a")
    b = _seg(tiny_seg_data, tmp_path / "b")
    assert [l.epoch for l in a.logs] == [1, 2, 3]
    assert all(np.isfinite(l.train_loss) for l in a.logs)
    assert a.logs[-1].train_loss < a.logs[0].train_loss
    assert read_epoch_logs(tmp_path / "a/log.csv") == a.logs
    assert (tmp_path / "a/log.csv").read_bytes() == (tmp_path / "b/log.csv").read_bytes()
    assert (tmp_path / "a/ck/weights.bin").read_bytes() == (tmp_path / "b/ck/weights.bin").read_bytes()
    # best checkpoint carries the max validation metric
    assert a.best_metric == max(l.val_metric for l in a.logs)
    assert a.logs[a.best_epoch - 1].val_metric == a.best_metric


def test_segmenter_contracts(tiny_seg_data):
    x, y = tiny_seg_data
    with pytest.raises(ContractViolation):
        train_segmenter(x[:0], y[:0])
    with pytest.raises(ContractViolation):
        train_segmenter(x, y, TrainConfig(epochs=1), UNetConfig(patch_side=64))


def test_empty_patch_subsampling_keeps_all_foreground():
    rng = np.random.Generator(np.random.Philox(0))
    y = np.zeros((100, 1, 4, 4), np.float32)
    y[::3, 0, 1, 1] = 1
    x = rng.random((100, 3, 4, 4)).astype(np.float32)
    xs, ys = subsample_empty_patches(x, y, 0.2, seed=1)
    fg = ys.reshape(len(ys), -1).any(1)
    assert fg.sum() == 34 and 0 < (~fg).sum() < 30
    xs2, _ = subsample_empty_patches(x, y, 0.2, seed=1)
    np.testing.assert_array_equal(xs, xs2)
    assert subsample_empty_patches(x, y, 1.0, 1)[0] is x


# -- ROI set and classifier ----------------------------------------------------
def _masks():
    samples = synth_dataset(SynthConfig(width=96, height=96, bacilli=(3, 5), distractors=(1, 2), seed=8), 4)
    return samples


def test_balanced_roi_set_properties():
    samples = _masks()
    ds = build_balanced_roi_set([s.image for s in samples], [s.mask for s in samples], min_area=5, seed=2)
    neg, pos = ds.counts()
    assert neg == pos > 0
    for crop, label, (i, (x0, y0, x1, y1)) in zip(ds.crops, ds.labels, ds.sources):
        m = samples[i].mask
        assert crop.shape[:2] == (y1 - y0 + 1, x1 - x0 + 1)
        if label == 0:
            assert m[y0 : y1 + 1, x0 : x1 + 1].mean() < 0.1
            assert not m[(y0 + y1) // 2, (x0 + x1) // 2]
    again = build_balanced_roi_set([s.image for s in samples], [s.mask for s in samples], min_area=5, seed=2)
    assert again.sources == ds.sources


def test_negative_overlap_on_random_scenes():
    rng = np.random.Generator(np.random.Philox(4))
    for k in range(20):
        m = np.zeros((40, 40), bool)
        for _ in range(4):
            y, x = rng.integers(0, 36, 2)
            m[y : y + 3, x : x + 4] = True
        img = np.zeros((40, 40, 3), np.uint8)
        ds = build_balanced_roi_set([img], [m], seed=k)
        for label, (_, (x0, y0, x1, y1)) in zip(ds.labels, ds.sources):
            if label == 0:
                assert m[y0 : y1 + 1, x0 : x1 + 1].mean() < 0.1


def test_candidate_negatives_used_first():
    samples = _masks()
    boxes = [s.distractor_boxes for s in samples]
    ds = build_balanced_roi_set([s.image for s in samples], [s.mask for s in samples], min_area=5, seed=2, candidate_negatives=boxes)
    used = {(i, tuple(b)) for i, b in ds.sources}
    for i, bs in enumerate(boxes):
        for b in bs:
            assert (i, tuple(b)) in used


def test_insufficient_background_names_image():
    m = np.ones((12, 12), bool)
    m[0, 0] = False
    with pytest.raises(TrainingError, match="slide_7"):
        build_balanced_roi_set([np.zeros((12, 12, 3), np.uint8)], [m], names=["slide_7"], attempts=20)


def test_resize_bilinear_constant_and_identity(rng):
    img = rng.integers(0, 255, (5, 7, 3)).astype(np.float32)
    np.testing.assert_allclose(resize_bilinear(np.full((3, 9, 3), 42.0), 8), 42.0)
    same = rng.random((6, 6, 3)).astype(np.float32)
    np.testing.assert_allclose(resize_bilinear(same, 6), same, rtol=1e-6)
    assert resize_bilinear(img, 8).shape == (8, 8, 3)


def test_classifier_trains_and_restores_best(tmp_path):
    samples = _masks()
    ds = build_balanced_roi_set([s.image for s in samples], [s.mask for s in samples], min_area=5, seed=2)
    vit = ViTConfig(roi_side=8, vit_patch=4, embed_dim=16, num_heads=2, num_layers=1, mlp_dim=32)
    res = train_classifier(ds, TrainConfig(epochs=25, batch_size=8, learning_rate=3e-3, validation_fraction=0.2), vit, checkpoint_dir=tmp_path)
    assert res.class_weights == (1.0, 1.0)
    assert res.best_metric == max(l.val_metric for l in res.logs)
    assert max(l.train_acc for l in res.logs) >= 0.95
    assert (tmp_path / "manifest.json").exists()


def test_classifier_rejects_single_class():
    ds = ROIDataset([np.zeros((4, 4, 3), np.uint8)] * 4, np.ones(4, dtype=np.int64))
    with pytest.raises(TrainingError):
        train_classifier(ds, TrainConfig(epochs=1))
