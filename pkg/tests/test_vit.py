import numpy as np
import pytest

from tbdetect.autograd import Adam, ContractViolation, Tensor, backward
from tbdetect.losses import FocalLossConfig, focal_loss
from tbdetect.training import roi_batch
from tbdetect.vit import TBViT, ViTConfig, mhsa_forward, patchify, patchify_and_embed


def tiny(**kw):
    base = dict(roi_side=8, vit_patch=4, embed_dim=16, num_heads=2, num_layers=2, mlp_dim=32)
    base.update(kw)
    return TBViT(ViTConfig(**base), seed=0)


def test_patchify_index_oracle(rng):
    x = rng.standard_normal((2, 3, 8, 8))
    tok = patchify(Tensor(x, dtype=np.float64), 4).data
    assert tok.shape == (2, 4, 48)
    for n in range(2):
        for t in range(4):
            gy, gx = divmod(t, 2)
            for r in range(4):
                for c in range(4):
                    for ch in range(3):
                        idx = (r * 4 + c) * 3 + ch
                        assert tok[n, t, idx] == x[n, ch, gy * 4 + r, gx * 4 + c]


def test_embedding_adds_positions(rng):
    m = tiny()
    x = Tensor(rng.random((1, 3, 8, 8)).astype(np.float32))
    emb = patchify_and_embed(x, m).data
    ref = patchify(x, 4).data @ m.embed.weight.data + m.embed.bias.data + m.pos.data
    np.testing.assert_allclose(emb, ref, rtol=1e-6)


def test_output_is_distribution(rng):
    m = tiny()
    p = m(Tensor(rng.random((5, 3, 8, 8)).astype(np.float32))).data
    assert p.shape == (5, 2)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, rtol=1e-6)


def test_attention_weights_rows_sum_to_one(rng):
    m = tiny()
    tokens = Tensor(rng.standard_normal((2, 4, 16)).astype(np.float32))
    out, w = mhsa_forward(tokens, m.blocks[0].attn, return_weights=True)
    assert out.shape == (2, 4, 16) and w.shape == (2, 2, 4, 4)
    np.testing.assert_allclose(w.data.sum(-1), 1.0, rtol=1e-6)


def test_shape_contracts():
    m = tiny()
    with pytest.raises(ContractViolation):
        m(Tensor(np.zeros((1, 3, 16, 16), dtype=np.float32)))
    with pytest.raises(ContractViolation):
        ViTConfig(roi_side=10, vit_patch=4).validate()
    with pytest.raises(ContractViolation):
        ViTConfig(embed_dim=10, num_heads=4).validate()


def test_inference_is_deterministic(rng):
    m = tiny()
    x = Tensor(rng.random((3, 3, 8, 8)).astype(np.float32))
    assert m(x).data.tobytes() == m(x).data.tobytes()


def test_overfits_sixteen_rois():
    # bright rods vs plain background, colours as in the synthetic smears
    rng = np.random.Generator(np.random.Philox(9))
    crops, labels = [], []
    for i in range(16):
        img = np.empty((12, 12, 3), dtype=np.uint8)
        img[:] = (150, 190, 215)
        img = np.clip(img + rng.normal(0, 6, img.shape), 0, 255).astype(np.uint8)
        if i % 2:
            r = int(rng.integers(2, 10))
            img[r : r + 2, 1:11] = (200, 60, 110)
        crops.append(img)
        labels.append(i % 2)
    x = roi_batch(crops, 8)
    y = np.array(labels)
    m = tiny(dropout_rate=0.0)
    opt = Adam(m.parameters(), lr=3e-3)
    cfg = FocalLossConfig(2.0, (1.0, 1.0))
    acc = 0.0
    for step in range(500):
        opt.zero_grad()
        out = m(Tensor(x), training=True, seed=step)
        backward(focal_loss(out, y, cfg))
        opt.step()
        acc = (m(Tensor(x)).data.argmax(1) == y).mean()
        if acc >= 15 / 16:
            break
    assert acc >= 15 / 16
