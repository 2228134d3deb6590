"""Differentiable operators over NCHW tensors.

Every op returns a new :class:`Tensor` whose backward closure maps the
output gradient to one gradient per parent (``None`` where a parent does not
need one). Arrays keep the dtype of their inputs, so float64 tensors stay
float64 for gradient checking.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from lowlight.tensor import ShapeError, Tensor, UsageError, is_grad_enabled

__all__ = [
    "abs",
    "activation",
    "add",
    "affine",
    "avgpool",
    "broadcast_spatial",
    "channel_max",
    "channel_mean",
    "channel_slice",
    "channel_var",
    "concat_channels",
    "conv2d",
    "elementwise",
    "instance_stats",
    "leaky_relu",
    "log_sigmoid",
    "maxpool2",
    "mul",
    "normalize_affine",
    "reduce_mean",
    "reduce_sum",
    "relu",
    "sigmoid",
    "sub",
    "upsample2",
]

_builtin_abs = abs


def _need(t: Tensor) -> bool:
    return t.requires_grad and is_grad_enabled()


def _check_4d(x: Tensor, name: str) -> None:
    if x.data.ndim != 4:
        raise ShapeError(f"{name} expects an NCHW tensor, got shape {x.shape}")


# ---------------------------------------------------------------------------
# convolution


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation with zero padding, via im2col and one GEMM."""
    _check_4d(x, "conv2d input")
    if weight.data.ndim != 4:
        raise ShapeError(f"conv2d weight must be OIHW, got shape {weight.shape}")
    n, c, h, w = x.shape
    o, ci, kh, kw = weight.shape
    if ci != c:
        raise ShapeError(f"conv2d channel mismatch: input has {c}, weight expects {ci}")
    if stride < 1 or padding < 0:
        raise ShapeError(f"conv2d needs stride >= 1 and padding >= 0, got {stride}, {padding}")
    if bias is not None and bias.shape != (o,):
        raise ShapeError(f"conv2d bias must have shape ({o},), got {bias.shape}")
    hp, wp = h + 2 * padding, w + 2 * padding
    if hp < kh or wp < kw:
        raise ShapeError(f"conv2d output would be empty for input {x.shape} and kernel {kh}x{kw}")
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1

    xp = x.data
    if padding:
        xp = np.pad(xp, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    # (N, Ho, Wo, C, kh, kw) -> rows of the patch matrix
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    wmat = weight.data.reshape(o, -1)
    out = cols @ wmat.T
    if bias is not None:
        out += bias.data
    out = out.reshape(n, ho, wo, o).transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out)

    need_x, need_w = _need(x), _need(weight)
    need_b = bias is not None and _need(bias)

    def _backward(g):
        gm = g.transpose(0, 2, 3, 1).reshape(-1, o)
        gw = (gm.T @ cols).reshape(weight.shape) if need_w else None
        gb = gm.sum(axis=0) if need_b else None
        gx = None
        if need_x:
            dcols = (gm @ wmat).reshape(n, ho, wo, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
            gxp = np.zeros((n, c, hp, wp), dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += dcols[:, :, i, j]
            gx = gxp[:, :, padding : padding + h, padding : padding + w] if padding else gxp
        return (gx, gw, gb) if bias is not None else (gx, gw)

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return Tensor._from_op(out, "conv2d", parents, _backward)


# ---------------------------------------------------------------------------
# activations


def _stable_sigmoid(a: np.ndarray) -> np.ndarray:
    z = np.exp(-np.abs(a))
    return np.where(a >= 0, 1.0 / (1.0 + z), z / (1.0 + z)).astype(a.dtype, copy=False)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = np.where(mask, x.data, 0).astype(x.dtype, copy=False)
    return Tensor._from_op(out, "relu", (x,), lambda g: (g * mask,))


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    scale = np.where(x.data > 0, 1.0, slope).astype(x.dtype)
    return Tensor._from_op(x.data * scale, "leaky_relu", (x,), lambda g: (g * scale,))


def sigmoid(x: Tensor) -> Tensor:
    s = _stable_sigmoid(x.data)
    return Tensor._from_op(s, "sigmoid", (x,), lambda g: (g * s * (1 - s),))


def log_sigmoid(x: Tensor) -> Tensor:
    """log(sigmoid(x)) = min(x, 0) - log1p(exp(-|x|)), finite for any finite x."""
    a = x.data
    out = np.minimum(a, 0) - np.log1p(np.exp(-np.abs(a)))
    return Tensor._from_op(out, "log_sigmoid", (x,), lambda g: (g * _stable_sigmoid(-a),))


def activation(kind: str, x: Tensor) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise UsageError(f"unknown activation {kind!r}; expected 'relu' or 'sigmoid'")


def abs(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    sign = np.sign(x.data)
    return Tensor._from_op(np.abs(x.data), "abs", (x,), lambda g: (g * sign,))


def affine(x: Tensor, scale: float, shift: float) -> Tensor:
    """scale * x + shift for Python scalars."""
    out = x.data * x.dtype.type(scale) + x.dtype.type(shift)
    return Tensor._from_op(out, "affine", (x,), lambda g: (g * g.dtype.type(scale),))


# ---------------------------------------------------------------------------
# resampling


def maxpool2(x: Tensor) -> Tensor:
    """2x2 max pool, stride 2; ties route the gradient to the first max in row-major order."""
    _check_4d(x, "maxpool2")
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2 needs even spatial size, got {h}x{w}")
    blocks = x.data.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]

    def _backward(g):
        gb = np.zeros(blocks.shape, dtype=g.dtype)
        np.put_along_axis(gb, idx[..., None], g[..., None], axis=-1)
        gx = gb.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
        return (gx,)

    return Tensor._from_op(out, "maxpool2", (x,), _backward)


def upsample2(x: Tensor) -> Tensor:
    """Nearest-neighbour 2x upsampling."""
    _check_4d(x, "upsample2")
    n, c, h, w = x.shape
    out = np.broadcast_to(x.data[:, :, :, None, :, None], (n, c, h, 2, w, 2)).reshape(n, c, 2 * h, 2 * w)

    def _backward(g):
        return (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),)

    return Tensor._from_op(out, "upsample2", (x,), _backward)


def avgpool(x: Tensor, factor: int) -> Tensor:
    """Mean over non-overlapping factor x factor blocks."""
    _check_4d(x, "avgpool")
    if factor == 1:
        return x
    n, c, h, w = x.shape
    if h % factor or w % factor:
        raise ShapeError(f"avgpool factor {factor} does not divide {h}x{w}")
    hh, ww = h // factor, w // factor
    out = x.data.reshape(n, c, hh, factor, ww, factor).mean(axis=(3, 5))

    def _backward(g):
        spread = np.broadcast_to(g[:, :, :, None, :, None], (n, c, hh, factor, ww, factor))
        return (spread.reshape(n, c, h, w) / g.dtype.type(factor * factor),)

    return Tensor._from_op(out, "avgpool", (x,), _backward)


# ---------------------------------------------------------------------------
# elementwise with single-channel broadcast


def _broadcast_check(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape == b.shape:
        return
    sa, sb = a.shape, b.shape
    if len(sa) == 4 and len(sb) == 4 and (sa[0], sa[2], sa[3]) == (sb[0], sb[2], sb[3]) and 1 in (sa[1], sb[1]):
        return
    raise ShapeError(f"{op}: incompatible shapes {sa} and {sb}")


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    return g.sum(axis=1, keepdims=True)


def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_check(a, b, "add")
    return Tensor._from_op(
        a.data + b.data, "add", (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape))
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_check(a, b, "sub")
    return Tensor._from_op(
        a.data - b.data, "sub", (a, b), lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape))
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_check(a, b, "mul")
    ad, bd = a.data, b.data

    def _backward(g):
        ga = _unbroadcast(g * bd, a.shape) if _need(a) else None
        gb = _unbroadcast(g * ad, b.shape) if _need(b) else None
        return ga, gb

    return Tensor._from_op(ad * bd, "mul", (a, b), _backward)


def elementwise(kind: str, a: Tensor, b: Tensor) -> Tensor:
    if kind == "add":
        return add(a, b)
    if kind == "mul":
        return mul(a, b)
    raise UsageError(f"unknown elementwise op {kind!r}; expected 'add' or 'mul'")


# ---------------------------------------------------------------------------
# statistics and normalization


def channel_mean(x: Tensor) -> Tensor:
    _check_4d(x, "channel_mean")
    n, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3))

    def _backward(g):
        return (np.broadcast_to((g / g.dtype.type(h * w))[:, :, None, None], x.shape).copy(),)

    return Tensor._from_op(out, "channel_mean", (x,), _backward)


def channel_var(x: Tensor) -> Tensor:
    """Biased (divide by H*W) per-sample, per-channel variance, two-pass."""
    _check_4d(x, "channel_var")
    n, c, h, w = x.shape
    centered = x.data - x.data.mean(axis=(2, 3), keepdims=True)
    out = (centered * centered).mean(axis=(2, 3))

    def _backward(g):
        return (g[:, :, None, None] * centered * g.dtype.type(2.0 / (h * w)),)

    return Tensor._from_op(out, "channel_var", (x,), _backward)


def instance_stats(x: Tensor) -> tuple[Tensor, Tensor]:
    return channel_mean(x), channel_var(x)


def _affine_view(p: Tensor, x_shape: tuple[int, ...], name: str) -> np.ndarray:
    n, c, h, w = x_shape
    s = p.shape
    if s == (c,):
        return p.data.reshape(1, c, 1, 1)
    if s == (n, c):
        return p.data.reshape(n, c, 1, 1)
    if s == x_shape:
        return p.data
    raise ShapeError(f"normalize_affine: {name} shape {s} fits neither (C,), (N, C) nor {x_shape}")


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    if len(shape) == 2:
        return g.sum(axis=(2, 3))
    return g.sum(axis=(0, 2, 3))


def normalize_affine(
    x: Tensor, mean: Tensor, var: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5
) -> Tensor:
    """gamma * (x - mean) / sqrt(var + eps) + beta, mean/var given per (N, C)."""
    _check_4d(x, "normalize_affine")
    if eps <= 0:
        raise UsageError(f"eps must be positive, got {eps}")
    n, c, h, w = x.shape
    if mean.shape != (n, c) or var.shape != (n, c):
        raise ShapeError(f"normalize_affine: mean/var must be ({n}, {c}), got {mean.shape} and {var.shape}")
    gv = _affine_view(gamma, x.shape, "gamma")
    bv = _affine_view(beta, x.shape, "beta")
    centered = x.data - mean.data[:, :, None, None]
    inv = 1.0 / np.sqrt(var.data[:, :, None, None] + x.dtype.type(eps))
    xhat = centered * inv
    out = gv * xhat + bv

    def _backward(g):
        dxhat = g * gv
        gx = dxhat * inv if _need(x) else None
        gmean = -(dxhat.sum(axis=(2, 3)) * inv[:, :, 0, 0]) if _need(mean) else None
        gvar = (dxhat * centered).sum(axis=(2, 3)) * (-0.5 * inv[:, :, 0, 0] ** 3) if _need(var) else None
        ggamma = _reduce_to(g * xhat, gamma.shape) if _need(gamma) else None
        gbeta = _reduce_to(g, beta.shape) if _need(beta) else None
        if gx is not None and gx.shape != x.shape:
            gx = np.broadcast_to(gx, x.shape).copy()
        return gx, gmean, gvar, ggamma, gbeta

    return Tensor._from_op(out, "normalize_affine", (x, mean, var, gamma, beta), _backward)


def broadcast_spatial(x: Tensor, height: int, width: int) -> Tensor:
    """Repeat an (N, C) tensor over an H x W grid."""
    if x.data.ndim != 2:
        raise ShapeError(f"broadcast_spatial expects (N, C), got {x.shape}")
    n, c = x.shape
    out = np.broadcast_to(x.data[:, :, None, None], (n, c, height, width)).copy()
    return Tensor._from_op(out, "broadcast_spatial", (x,), lambda g: (g.sum(axis=(2, 3)),))


# ---------------------------------------------------------------------------
# channel plumbing


def concat_channels(parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise ShapeError("concat_channels needs at least one tensor")
    if len(parts) == 1:
        return parts[0]
    ref = parts[0].shape
    for p in parts:
        if p.data.ndim != 4 or (p.shape[0], p.shape[2], p.shape[3]) != (ref[0], ref[2], ref[3]):
            raise ShapeError(f"concat_channels: shape {p.shape} does not match N, H, W of {ref}")
    bounds = np.cumsum([0] + [p.shape[1] for p in parts])
    out = np.concatenate([p.data for p in parts], axis=1)

    def _backward(g):
        return tuple(g[:, bounds[i] : bounds[i + 1]] for i in range(len(parts)))

    return Tensor._from_op(out, "concat_channels", tuple(parts), _backward)


def channel_slice(x: Tensor, start: int, stop: int) -> Tensor:
    _check_4d(x, "channel_slice")
    c = x.shape[1]
    if not 0 <= start < stop <= c:
        raise ShapeError(f"channel_slice [{start}:{stop}] out of range for {c} channels")

    def _backward(g):
        gx = np.zeros(x.shape, dtype=g.dtype)
        gx[:, start:stop] = g
        return (gx,)

    return Tensor._from_op(x.data[:, start:stop], "channel_slice", (x,), _backward)


def channel_max(x: Tensor) -> Tensor:
    """Per-pixel max over channels, keeping a singleton channel axis. Not differentiable."""
    _check_4d(x, "channel_max")
    return Tensor(x.data.max(axis=1, keepdims=True), dtype=x.dtype)


# ---------------------------------------------------------------------------
# reductions


def reduce_mean(x: Tensor) -> Tensor:
    if x.data.size == 0:
        raise ShapeError("reduce_mean of an empty tensor")
    count = x.data.size
    out = np.asarray(x.data.mean(), dtype=x.dtype)
    return Tensor._from_op(
        out, "reduce_mean", (x,), lambda g: (np.full(x.shape, g / g.dtype.type(count), dtype=g.dtype),)
    )


def reduce_sum(x: Tensor) -> Tensor:
    out = np.asarray(x.data.sum(), dtype=x.dtype)
    return Tensor._from_op(out, "reduce_sum", (x,), lambda g: (np.full(x.shape, g, dtype=g.dtype),))
