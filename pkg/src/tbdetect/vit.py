"""TBViT: a small vision transformer that labels ROIs as bacilli / non-bacilli."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .autograd import (
    ContractViolation,
    Module,
    Tensor,
    dense,
    dropout,
    fan_in_uniform,
    gelu,
    layernorm,
    make_rng,
    matmul,
    softmax,
)


@dataclass
class ViTConfig:
    roi_side: int = 32
    vit_patch: int = 8
    embed_dim: int = 64
    num_heads: int = 4
    num_layers: int = 4
    mlp_dim: int = 128
    dropout_rate: float = 0.1
    num_classes: int = 2
    in_channels: int = 3

    def validate(self) -> "ViTConfig":
        if self.roi_side % self.vit_patch:
            raise ContractViolation(f"roi_side {self.roi_side} not divisible by vit_patch {self.vit_patch}")
        if self.embed_dim % self.num_heads:
            raise ContractViolation(f"embed_dim {self.embed_dim} not divisible by num_heads {self.num_heads}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ContractViolation("dropout_rate must lie in [0, 1)")
        if self.num_classes < 2 or self.num_layers < 0:
            raise ContractViolation("need num_classes >= 2 and num_layers >= 0")
        return self

    @property
    def num_tokens(self) -> int:
        return (self.roi_side // self.vit_patch) ** 2

    def to_dict(self) -> dict:
        return asdict(self)


class Dense(Module):
    def __init__(self, din: int, dout: int, rng: np.random.Generator):
        super().__init__()
        self.weight = self.add_param("weight", fan_in_uniform(rng, (din, dout), din))
        self.bias = self.add_param("bias", np.zeros(dout, dtype=np.float32))

    def __call__(self, x: Tensor) -> Tensor:
        return dense(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, dim: int):
        super().__init__()
        self.gamma = self.add_param("gamma", np.ones(dim, dtype=np.float32))
        self.beta = self.add_param("beta", np.zeros(dim, dtype=np.float32))

    def __call__(self, x: Tensor) -> Tensor:
        return layernorm(x, self.gamma, self.beta)


class SelfAttention(Module):
    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        super().__init__()
        if dim % heads:
            raise ContractViolation(f"embed_dim {dim} not divisible by num_heads {heads}")
        self.dim, self.heads = dim, heads
        self.q = self.add_module("q", Dense(dim, dim, rng))
        self.k = self.add_module("k", Dense(dim, dim, rng))
        self.v = self.add_module("v", Dense(dim, dim, rng))
        self.out = self.add_module("out", Dense(dim, dim, rng))


class Block(Module):
    def __init__(self, cfg: ViTConfig, rng: np.random.Generator):
        super().__init__()
        self.norm1 = self.add_module("norm1", LayerNorm(cfg.embed_dim))
        self.attn = self.add_module("attn", SelfAttention(cfg.embed_dim, cfg.num_heads, rng))
        self.norm2 = self.add_module("norm2", LayerNorm(cfg.embed_dim))
        self.fc1 = self.add_module("fc1", Dense(cfg.embed_dim, cfg.mlp_dim, rng))
        self.fc2 = self.add_module("fc2", Dense(cfg.mlp_dim, cfg.embed_dim, rng))


def mhsa_forward(
    tokens: Tensor,
    attn: SelfAttention,
    training: bool = False,
    rate: float = 0.0,
    seed: int = 0,
    return_weights: bool = False,
):
    """Multi-head scaled dot-product self-attention over ``[N, T, D]``."""
    if tokens.ndim != 3 or tokens.shape[2] != attn.dim:
        raise ContractViolation(f"expected tokens [N,T,{attn.dim}], got {tokens.shape}")
    n, t, d = tokens.shape
    h = attn.heads
    dh = d // h

    def heads(x: Tensor) -> Tensor:
        return x.reshape(n, t, h, dh).transpose(0, 2, 1, 3)

    q, k, v = heads(attn.q(tokens)), heads(attn.k(tokens)), heads(attn.v(tokens))
    scores = matmul(q, k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(dh))
    weights = softmax(scores, axis=-1)
    mixed = matmul(dropout(weights, rate, training, seed), v)
    out = attn.out(mixed.transpose(0, 2, 1, 3).reshape(n, t, d))
    return (out, weights) if return_weights else out


class TBViT(Module):
    def __init__(self, config: ViTConfig | None = None, seed: int = 0):
        super().__init__()
        self.config = cfg = (config or ViTConfig()).validate()
        rng = make_rng(seed)
        patch_dim = cfg.vit_patch**2 * cfg.in_channels
        self.embed = self.add_module("embed", Dense(patch_dim, cfg.embed_dim, rng))
        self.pos = self.add_param(
            "pos_embedding", (0.02 * rng.standard_normal((cfg.num_tokens, cfg.embed_dim))).astype(np.float32)
        )
        self.blocks = [self.add_module(f"block{i}", Block(cfg, rng)) for i in range(cfg.num_layers)]
        self.norm = self.add_module("norm", LayerNorm(cfg.embed_dim))
        self.head = self.add_module("head", Dense(cfg.embed_dim, cfg.num_classes, rng))

    def __call__(self, x: Tensor, training: bool = False, seed: int | None = None) -> Tensor:
        return tbvit_forward(x, self, training, seed)


def patchify(x: Tensor, patch: int) -> Tensor:
    """``[N, C, S, S]`` to ``[N, T, patch*patch*C]``; tokens in row-major grid
    order, each vector laid out as (row, col, channel)."""
    n, c, s, _ = x.shape
    g = s // patch
    return x.reshape(n, c, g, patch, g, patch).transpose(0, 2, 4, 3, 5, 1).reshape(n, g * g, patch * patch * c)


def patchify_and_embed(x: Tensor, model: TBViT) -> Tensor:
    cfg = model.config
    if x.ndim != 4 or x.shape[1] != cfg.in_channels or x.shape[2] != cfg.roi_side or x.shape[3] != cfg.roi_side:
        raise ContractViolation(
            f"expected ROI batch [N,{cfg.in_channels},{cfg.roi_side},{cfg.roi_side}], got {x.shape}"
        )
    return model.embed(patchify(x, cfg.vit_patch)) + model.pos


def tbvit_forward(x: Tensor, model: TBViT, training: bool = False, seed: int | None = None) -> Tensor:
    """Class probabilities ``[N, num_classes]`` for an ROI batch."""
    cfg = model.config
    rate = cfg.dropout_rate
    base = 0 if seed is None else seed * 1000
    h = dropout(patchify_and_embed(x, model), rate, training, base + 1)
    for i, blk in enumerate(model.blocks):
        s = base + 10 * (i + 1)
        a = mhsa_forward(blk.norm1(h), blk.attn, training, rate, s)
        h = h + dropout(a, rate, training, s + 1)
        m = blk.fc2(dropout(gelu(blk.fc1(blk.norm2(h))), rate, training, s + 2))
        h = h + dropout(m, rate, training, s + 3)
    pooled = model.norm(h).mean(axis=1)
    return softmax(model.head(pooled), axis=-1)
