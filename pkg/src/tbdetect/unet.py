"""Attention residual U-Net for per-pixel bacilli probability."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .autograd import (
    ContractViolation,
    Module,
    Tensor,
    batchnorm2d,
    concat,
    conv2d,
    conv_transpose2d,
    dropout,
    fan_in_uniform,
    make_rng,
    maxpool2d,
    relu,
    sigmoid,
)


@dataclass
class UNetConfig:
    in_channels: int = 3
    base_channels: int = 16
    depth: int = 3
    dropout_rate: float = 0.1
    patch_side: int = 64
    bn_momentum: float = 0.9
    bn_eps: float = 1e-5
    output_prior: float | None = None  # initial foreground probability of the head; None keeps bias 0

    def validate(self) -> "UNetConfig":
        if self.base_channels < 1 or self.depth < 1 or self.in_channels < 1:
            raise ContractViolation("base_channels, depth and in_channels must be >= 1")
        if self.patch_side % (2**self.depth):
            raise ContractViolation(
                f"patch_side {self.patch_side} not divisible by 2**depth = {2 ** self.depth}"
            )
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ContractViolation("dropout_rate must lie in [0, 1)")
        if self.output_prior is not None and not 0.0 < self.output_prior < 1.0:
            raise ContractViolation("output_prior must lie in (0, 1)")
        return self

    def channels(self, level: int) -> int:
        return self.base_channels * 2**level

    def to_dict(self) -> dict:
        return asdict(self)


class Conv(Module):
    def __init__(self, cin: int, cout: int, k: int, rng: np.random.Generator):
        super().__init__()
        self.weight = self.add_param("weight", fan_in_uniform(rng, (cout, cin, k, k), cin * k * k))
        self.bias = self.add_param("bias", np.zeros(cout, dtype=np.float32))

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, 1, "same")


class BatchNorm(Module):
    def __init__(self, channels: int, momentum: float, eps: float):
        super().__init__()
        self.momentum, self.eps = momentum, eps
        self.gamma = self.add_param("gamma", np.ones(channels, dtype=np.float32))
        self.beta = self.add_param("beta", np.zeros(channels, dtype=np.float32))
        self.running_mean = self.add_param("running_mean", np.zeros(channels, dtype=np.float32), trainable=False)
        self.running_var = self.add_param("running_var", np.ones(channels, dtype=np.float32), trainable=False)

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        return batchnorm2d(
            x, self.gamma, self.beta, self.running_mean.data, self.running_var.data,
            training, self.momentum, self.eps,
        )


class ResidualBlock(Module):
    """conv-BN-ReLU-conv-BN plus an identity (or 1x1-projected) shortcut, then ReLU."""

    def __init__(self, cin: int, cout: int, rng: np.random.Generator, momentum: float = 0.9, eps: float = 1e-5):
        super().__init__()
        self.cin, self.cout = cin, cout
        self.conv1 = self.add_module("conv1", Conv(cin, cout, 3, rng))
        self.bn1 = self.add_module("bn1", BatchNorm(cout, momentum, eps))
        self.conv2 = self.add_module("conv2", Conv(cout, cout, 3, rng))
        self.bn2 = self.add_module("bn2", BatchNorm(cout, momentum, eps))
        self.proj = self.add_module("proj", Conv(cin, cout, 1, rng)) if cin != cout else None

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.cin:
            raise ContractViolation(f"residual block expects {self.cin} input channels, got shape {x.shape}")
        h = relu(self.bn1(self.conv1(x), training))
        h = self.bn2(self.conv2(h), training)
        shortcut = self.proj(x) if self.proj is not None else x
        return relu(h + shortcut)


class AttentionGate(Module):
    """Additive attention: alpha = sigmoid(psi(relu(W_g g + W_x x)))."""

    def __init__(self, skip_channels: int, gate_channels: int, rng: np.random.Generator, inter_channels: int | None = None):
        super().__init__()
        inter = inter_channels or max(1, skip_channels // 2)
        self.inter_channels = inter
        self.w_g = self.add_module("w_g", Conv(gate_channels, inter, 1, rng))
        self.w_x = self.add_module("w_x", Conv(skip_channels, inter, 1, rng))
        self.psi = self.add_module("psi", Conv(inter, 1, 1, rng))

    def __call__(self, skip: Tensor, gate: Tensor) -> tuple[Tensor, Tensor]:
        if skip.shape[0] != gate.shape[0] or skip.shape[2:] != gate.shape[2:]:
            raise ContractViolation(f"attention gate inputs not aligned: skip {skip.shape}, gate {gate.shape}")
        alpha = sigmoid(self.psi(relu(self.w_g(gate) + self.w_x(skip))))
        return skip * alpha, alpha


class Upsample(Module):
    def __init__(self, cin: int, cout: int, rng: np.random.Generator):
        super().__init__()
        self.weight = self.add_param("weight", fan_in_uniform(rng, (cin, cout, 2, 2), cin))
        self.bias = self.add_param("bias", np.zeros(cout, dtype=np.float32))

    def __call__(self, x: Tensor) -> Tensor:
        return conv_transpose2d(x, self.weight, self.bias, stride=2)


class AttentionResUNet(Module):
    def __init__(self, config: UNetConfig | None = None, seed: int = 0):
        super().__init__()
        self.config = cfg = (config or UNetConfig()).validate()
        rng = make_rng(seed)
        m, e = cfg.bn_momentum, cfg.bn_eps
        self.encoders = []
        cin = cfg.in_channels
        for level in range(cfg.depth):
            block = ResidualBlock(cin, cfg.channels(level), rng, m, e)
            self.encoders.append(self.add_module(f"enc{level}", block))
            cin = cfg.channels(level)
        self.bottleneck = self.add_module("bottleneck", ResidualBlock(cin, cfg.channels(cfg.depth), rng, m, e))
        self.ups, self.gates, self.decoders = [], [], []
        for level in reversed(range(cfg.depth)):
            c = cfg.channels(level)
            self.ups.append(self.add_module(f"up{level}", Upsample(cfg.channels(level + 1), c, rng)))
            self.gates.append(self.add_module(f"att{level}", AttentionGate(c, c, rng)))
            self.decoders.append(self.add_module(f"dec{level}", ResidualBlock(2 * c, c, rng, m, e)))
        self.head = self.add_module("head", Conv(cfg.channels(0), 1, 1, rng))
        if cfg.output_prior is not None:
            # start near the background rate instead of 0.5 everywhere
            self.head.bias.data[:] = np.log(cfg.output_prior / (1.0 - cfg.output_prior))

    def __call__(self, x: Tensor, training: bool = False, seed: int | None = None, return_alphas: bool = False):
        return unet_forward(x, self, training, seed, return_alphas)


def unet_forward(x: Tensor, model: AttentionResUNet, training: bool = False, seed: int | None = None, return_alphas: bool = False):
    """Map ``[N, C, S, S]`` to per-pixel probabilities ``[N, 1, S, S]``.

    ``seed`` drives the dropout masks in training mode.
    """
    cfg = model.config
    if x.ndim != 4 or x.shape[1] != cfg.in_channels:
        raise ContractViolation(f"expected input [N,{cfg.in_channels},S,S], got {x.shape}")
    div = 2**cfg.depth
    if x.shape[2] % div or x.shape[3] % div:
        raise ContractViolation(f"spatial extents {x.shape[2:]} not divisible by {div}")
    base_seed = 0 if seed is None else seed
    skips = []
    h = x
    for block in model.encoders:
        h = block(h, training)
        skips.append(h)
        h = maxpool2d(h, 2)
    h = model.bottleneck(h, training)
    h = dropout(h, cfg.dropout_rate, training, base_seed * 1000 + 1)
    alphas = []
    for i, (up, gate, dec) in enumerate(zip(model.ups, model.gates, model.decoders)):
        u = up(h)
        skip = skips[cfg.depth - 1 - i]
        gated, alpha = gate(skip, u)
        alphas.append(alpha)
        h = concat([gated, u], axis=1)
        h = dropout(h, cfg.dropout_rate, training, base_seed * 1000 + 2 + i)
        h = dec(h, training)
    out = sigmoid(model.head(h))
    return (out, alphas) if return_alphas else out
