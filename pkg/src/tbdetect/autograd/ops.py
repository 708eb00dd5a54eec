"""Neural-network primitives with hand-written backward rules.

Layouts: images are ``[N, C, H, W]``; conv weights ``[F, C, k, k]``;
transposed-conv weights ``[C_in, C_out, k, k]``; dense weights ``[D, E]``.
"""

from __future__ import annotations

import numpy as np

from .tensor import ContractViolation, Tensor, make_result, no_grad  # noqa: F401

_GELU_C = np.sqrt(2.0 / np.pi)


def _check_rank(x: Tensor, rank: int, what: str) -> None:
    if x.ndim != rank:
        raise ContractViolation(f"{what} expects a rank-{rank} tensor, got shape {x.shape}")


# -- convolution ----------------------------------------------------------------
# Convolutions run internally on channels-last copies: the column matrix is
# [N*Ho*Wo, k*k*C], which keeps the GEMM tall and skinny.
def _im2col(xpad: np.ndarray, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    n, _, _, c = xpad.shape
    cols = np.empty((n, ho, wo, k, k, c), dtype=xpad.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, :, i, j, :] = xpad[:, i : i + stride * ho : stride, j : j + stride * wo : stride, :]
    return cols.reshape(n * ho * wo, k * k * c)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: str = "same") -> Tensor:
    """2-D cross-correlation with odd square kernels."""
    _check_rank(x, 4, "conv2d input")
    _check_rank(weight, 4, "conv2d weight")
    n, c, h, w = x.shape
    f, wc, k, k2 = weight.shape
    if wc != c:
        raise ContractViolation(f"conv2d channel mismatch: input C={c}, weight C={wc}")
    if k != k2 or k % 2 == 0:
        raise ContractViolation(f"conv2d kernel must be odd and square, got {k}x{k2}")
    if stride < 1:
        raise ContractViolation(f"conv2d stride must be >= 1, got {stride}")
    if padding == "same":
        pad = k // 2
    elif padding == "valid":
        pad = 0
    else:
        raise ContractViolation(f"unknown padding {padding!r}")
    if h + 2 * pad < k or w + 2 * pad < k:
        raise ContractViolation(f"conv2d input extent {h}x{w} smaller than kernel {k}")
    if bias is not None and bias.shape != (f,):
        raise ContractViolation(f"conv2d bias shape {bias.shape} != ({f},)")

    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    # weight as [k*k*C, F] matching the column layout (i, j, c)
    wmat = np.ascontiguousarray(weight.data.transpose(2, 3, 1, 0)).reshape(k * k * c, f)
    xl = x.data.transpose(0, 2, 3, 1)
    if k == 1 and stride == 1:
        cols = np.ascontiguousarray(xl).reshape(n * h * w, c)
    else:
        xpad = np.zeros((n, h + 2 * pad, w + 2 * pad, c), dtype=x.dtype)
        xpad[:, pad : pad + h, pad : pad + w, :] = xl
        cols = _im2col(xpad, k, stride, ho, wo)
    out = cols @ wmat
    if bias is not None:
        out += bias.data
    out = np.ascontiguousarray(out.reshape(n, ho, wo, f).transpose(0, 3, 1, 2))

    def bw(g):
        gl = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(n * ho * wo, f)
        gw = (cols.T @ gl).reshape(k, k, c, f).transpose(3, 2, 0, 1)
        gb = gl.sum(axis=0) if bias is not None else None
        gx = None
        if x.requires_grad:
            dcols = (gl @ wmat.T).reshape(n, ho, wo, k, k, c)
            if k == 1 and stride == 1:
                gx = dcols[:, :, :, 0, 0, :].transpose(0, 3, 1, 2)
            else:
                gpad = np.zeros((n, h + 2 * pad, w + 2 * pad, c), dtype=g.dtype)
                for i in range(k):
                    for j in range(k):
                        gpad[:, i : i + stride * ho : stride, j : j + stride * wo : stride, :] += dcols[:, :, :, i, j, :]
                gx = gpad[:, pad : pad + h, pad : pad + w, :].transpose(0, 3, 1, 2)
        return gx, np.ascontiguousarray(gw), gb

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out, inputs, "conv2d", bw)


def conv_transpose2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 2) -> Tensor:
    """Transposed convolution with non-overlapping ``stride x stride`` kernels.

    Output extents are exactly ``stride`` times the input extents.
    """
    _check_rank(x, 4, "conv_transpose2d input")
    _check_rank(weight, 4, "conv_transpose2d weight")
    n, c, h, w = x.shape
    wc, f, k, k2 = weight.shape
    if wc != c:
        raise ContractViolation(f"conv_transpose2d channel mismatch: input C={c}, weight C={wc}")
    if k != stride or k2 != stride:
        raise ContractViolation(f"conv_transpose2d needs kernel == stride, got kernel {k}x{k2}, stride {stride}")
    if bias is not None and bias.shape != (f,):
        raise ContractViolation(f"conv_transpose2d bias shape {bias.shape} != ({f},)")
    s = stride
    xf = x.data.transpose(0, 2, 3, 1).reshape(-1, c)
    wmat = weight.data.reshape(c, f * s * s)
    y = (xf @ wmat).reshape(n, h, w, f, s, s)
    out = y.transpose(0, 3, 1, 4, 2, 5).reshape(n, f, h * s, w * s)
    if bias is not None:
        out = out + bias.data.reshape(1, f, 1, 1)
    out = np.ascontiguousarray(out)

    def bw(g):
        gy = g.reshape(n, f, h, s, w, s).transpose(0, 2, 4, 1, 3, 5).reshape(-1, f * s * s)
        gw = (xf.T @ gy).reshape(weight.shape)
        gx = (gy @ wmat.T).reshape(n, h, w, c).transpose(0, 3, 1, 2)
        gb = g.sum(axis=(0, 2, 3)) if bias is not None else None
        return gx, gw, gb

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out, inputs, "conv_transpose2d", bw)


def maxpool2d(x: Tensor, window: int = 2) -> Tensor:
    """Non-overlapping max pooling; ties route the gradient to the first
    maximal element in row-major window order."""
    _check_rank(x, 4, "maxpool2d input")
    n, c, h, w = x.shape
    if h % window or w % window:
        raise ContractViolation(f"maxpool2d needs extents divisible by {window}, got {h}x{w}")
    ho, wo = h // window, w // window
    blocks = x.data.reshape(n, c, ho, window, wo, window).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, -1)
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]

    def bw(g):
        gb = np.zeros(blocks.shape, dtype=g.dtype)
        np.put_along_axis(gb, idx[..., None], g[..., None], axis=-1)
        gx = gb.reshape(n, c, ho, wo, window, window).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
        return (gx,)

    return make_result(np.ascontiguousarray(out), (x,), "maxpool2d", bw)


# -- normalisation ----------------------------------------------------------------
def batchnorm2d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.9,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel batch normalisation.

    In training mode the batch statistics (biased variance) are used and the
    running arrays are updated in place as
    ``running = momentum * running + (1 - momentum) * batch``.
    """
    _check_rank(x, 4, "batchnorm2d input")
    n, c, h, w = x.shape
    if n * h * w == 0:
        raise ContractViolation("batchnorm2d got an empty batch")
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ContractViolation(f"batchnorm2d affine params must have shape ({c},)")
    if eps <= 0:
        raise ContractViolation("batchnorm2d epsilon must be positive")
    shp = (1, c, 1, 1)
    if training:
        mu = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        running_mean *= momentum
        running_mean += (1 - momentum) * mu
        running_var *= momentum
        running_var += (1 - momentum) * var
    else:
        mu, var = running_mean, running_var
    inv = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = (x.data - mu.reshape(shp).astype(x.dtype)) * inv.reshape(shp)
    out = xhat * gamma.data.reshape(shp) + beta.data.reshape(shp)
    m = n * h * w

    def bw(g):
        gg = (g * xhat).sum(axis=(0, 2, 3))
        gbeta = g.sum(axis=(0, 2, 3))
        gxhat = g * gamma.data.reshape(shp)
        if training:
            gx = (
                inv.reshape(shp)
                / m
                * (m * gxhat - gxhat.sum(axis=(0, 2, 3), keepdims=True) - xhat * (gxhat * xhat).sum(axis=(0, 2, 3), keepdims=True))
            )
        else:
            gx = gxhat * inv.reshape(shp)
        return gx, gg, gbeta

    return make_result(out.astype(x.dtype, copy=False), (x, gamma, beta), "batchnorm2d", bw)


def layernorm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis."""
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ContractViolation(f"layernorm affine params must have shape ({d},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = xhat * gamma.data + beta.data

    def bw(g):
        red = tuple(range(g.ndim - 1))
        gg = (g * xhat).sum(axis=red)
        gb = g.sum(axis=red)
        gxhat = g * gamma.data
        gx = inv / d * (d * gxhat - gxhat.sum(-1, keepdims=True) - xhat * (gxhat * xhat).sum(-1, keepdims=True))
        return gx, gg, gb

    return make_result(out.astype(x.dtype, copy=False), (x, gamma, beta), "layernorm", bw)


# -- activations --------------------------------------------------------------------
def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return make_result(x.data * mask, (x,), "relu", lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    # split by sign to avoid overflow in exp
    z = x.data
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return make_result(out, (x,), "sigmoid", lambda g: (g * out * (1.0 - out),))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    if not -x.ndim <= axis < x.ndim:
        raise ContractViolation(f"softmax axis {axis} invalid for shape {x.shape}")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make_result(out, (x,), "softmax", bw)


def gelu(x: Tensor) -> Tensor:
    """tanh approximation of GELU."""
    z = x.data
    u = _GELU_C * (z + 0.044715 * z**3)
    t = np.tanh(u)
    out = 0.5 * z * (1.0 + t)

    def bw(g):
        du = _GELU_C * (1.0 + 3 * 0.044715 * z**2)
        return (g * (0.5 * (1.0 + t) + 0.5 * z * (1.0 - t * t) * du),)

    return make_result(out.astype(z.dtype, copy=False), (x,), "gelu", bw)


def activation(x: Tensor, kind: str, axis: int = -1) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "softmax":
        return softmax(x, axis)
    if kind == "gelu":
        return gelu(x)
    raise ContractViolation(f"unknown activation {kind!r}")


# -- dense / dropout ----------------------------------------------------------------
def dense(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map over the last axis: ``x @ weight + bias``."""
    if weight.ndim != 2:
        raise ContractViolation(f"dense weight must be 2-D, got {weight.shape}")
    d, e = weight.shape
    if x.shape[-1] != d:
        raise ContractViolation(f"dense inner dimension mismatch: input {x.shape[-1]}, weight {d}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, d)
    out = x2 @ weight.data
    if bias is not None:
        out += bias.data

    def bw(g):
        g2 = g.reshape(-1, e)
        gx = (g2 @ weight.data.T).reshape(x.shape) if x.requires_grad else None
        return gx, x2.T @ g2, (g2.sum(axis=0) if bias is not None else None)

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out.reshape(*lead, e), inputs, "dense", bw)


def dropout(x: Tensor, rate: float, training: bool, seed: int | None = None) -> Tensor:
    """Inverted dropout; the keep-mask is a pure function of ``seed``."""
    if not 0.0 <= rate < 1.0:
        raise ContractViolation(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    rng = np.random.Generator(np.random.Philox(0 if seed is None else seed))
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / x.dtype.type(1.0 - rate)
    return make_result(x.data * keep, (x,), "dropout", lambda g: (g * keep,))
