"""Differentiable ops on NCHW tensors.

Every op returns a new :class:`Tensor` and, when any input needs a gradient,
a closure mapping the output gradient to one gradient per input.
"""
from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .tensor import Tensor, make_node


class ShapeError(ValueError):
    pass


# -- convolution -------------------------------------------------------------

def conv_output_size(size: int, k: int, stride: int, padding: int) -> int:
    span = size + 2 * padding - k
    if span < 0 or span % stride:
        raise ShapeError(
            f"extent {size} with kernel {k}, stride {stride}, padding {padding} "
            f"does not give an integer output size"
        )
    return span // stride + 1


def _im2col(x: np.ndarray, k: int, stride: int, padding: int) -> np.ndarray:
    """Columns [C*k*k, B*H'*W'] of a padded NCHW array, channel-major rows."""
    if padding > 0:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    elif padding < 0:
        p = -padding
        x = x[:, :, p:-p, p:-p]
    b, c, h, w = x.shape
    ho = (h - k) // stride + 1
    wo = (w - k) // stride + 1
    xt = np.ascontiguousarray(x.transpose(1, 0, 2, 3))
    cols = np.empty((c, k * k, b, ho, wo))
    for i in range(k):
        for j in range(k):
            cols[:, i * k + j] = xt[:, :, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride]
    return cols.reshape(c * k * k, b * ho * wo)


def _correlate(x: np.ndarray, w: np.ndarray, stride: int, padding: int,
               cols: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Cross-correlation x [B,C,H,W] * w [O,C,k,k] -> ([B,O,H',W'], columns)."""
    k = w.shape[-1]
    b, _, h, wd = x.shape
    ho = (h + 2 * padding - k) // stride + 1
    wo = (wd + 2 * padding - k) // stride + 1
    if cols is None:
        cols = _im2col(x, k, stride, padding)
    out = w.reshape(w.shape[0], -1) @ cols
    return np.ascontiguousarray(out.reshape(-1, b, ho, wo).transpose(1, 0, 2, 3)), cols


def _dilate(g: np.ndarray, stride: int) -> np.ndarray:
    if stride == 1:
        return g
    b, o, h, w = g.shape
    out = np.zeros((b, o, (h - 1) * stride + 1, (w - 1) * stride + 1))
    out[:, :, ::stride, ::stride] = g
    return out


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    xd, wd = x.data, weight.data
    if xd.ndim != 4 or wd.ndim != 4:
        raise ShapeError(f"conv2d expects 4-d input and kernel, got {xd.shape} and {wd.shape}")
    b, c, h, w = xd.shape
    o, ci, kh, kw = wd.shape
    if ci != c:
        raise ShapeError(f"input has {c} channels but kernel {wd.shape} expects {ci}")
    if kh != kw or kh % 2 == 0:
        raise ShapeError(f"kernel must be square with odd size, got {kh}x{kw}")
    if bias is not None and bias.shape != (o,):
        raise ShapeError(f"bias shape {bias.shape} does not match {o} output channels")
    if stride < 1 or padding < 0:
        raise ShapeError(f"invalid stride {stride} / padding {padding}")
    conv_output_size(h, kh, stride, padding)
    conv_output_size(w, kw, stride, padding)

    out, cols = _correlate(xd, wd, stride, padding)
    if bias is not None:
        out += bias.data[None, :, None, None]

    def backward(g):
        gx = gw = gb = None
        if x.requires_grad or x._backward is not None:
            flipped = wd[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
            gx, _ = _correlate(_dilate(g, stride), flipped, 1, kh - 1 - padding)
        if weight.requires_grad or weight._backward is not None:
            g2 = g.transpose(1, 0, 2, 3).reshape(o, -1)
            gw = (g2 @ cols.T).reshape(wd.shape)
        if bias is not None:
            gb = g.sum(axis=(0, 2, 3))
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_node(out, parents, backward, "conv2d")


# -- pointwise ---------------------------------------------------------------

def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return make_node(x.data * mask, (x,), lambda g: (g * mask,), "relu")


def sigmoid(x: Tensor) -> Tensor:
    s = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return make_node(s, (x,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def softmax_channels(x: Tensor) -> Tensor:
    """Softmax over axis 1 of an NCHW tensor."""
    z = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=1, keepdims=True)),)

    return make_node(s, (x,), backward, "softmax")


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add needs equal shapes, got {a.shape} and {b.shape}")
    return make_node(a.data + b.data, (a, b), lambda g: (g, g), "add")


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mul needs equal shapes, got {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    return make_node(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def scale(a: Tensor, c: float) -> Tensor:
    return make_node(a.data * c, (a,), lambda g: (g * c,), "scale")


def tsum(a: Tensor) -> Tensor:
    shape = a.shape
    return make_node(np.array(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, shape).copy(),), "sum")


def linear_combination(terms: Sequence[Tensor], coeffs: Sequence[float]) -> Tensor:
    """sum_i coeffs[i] * terms[i] for equally shaped tensors."""
    if len(terms) != len(coeffs) or not terms:
        raise ShapeError("linear_combination needs one coefficient per term")
    shape = terms[0].shape
    for t in terms:
        if t.shape != shape:
            raise ShapeError(f"linear_combination shape mismatch: {t.shape} vs {shape}")
    coeffs = [float(c) for c in coeffs]
    out = sum(c * t.data for c, t in zip(coeffs, terms))
    return make_node(np.asarray(out, dtype=np.float64), tuple(terms),
                     lambda g: tuple(g * c for c in coeffs), "linear-combination")


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    datas = [t.data for t in tensors]
    out = np.concatenate(datas, axis=axis)
    splits = np.cumsum([d.shape[axis] for d in datas])[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return make_node(out, tuple(tensors), backward, "concat")


def pad2d(x: Tensor, top: int, bottom: int, left: int, right: int) -> Tensor:
    """Zero padding of the two trailing axes."""
    if min(top, bottom, left, right) < 0:
        raise ShapeError("padding must be non-negative")
    widths = [(0, 0)] * (x.data.ndim - 2) + [(top, bottom), (left, right)]
    out = np.pad(x.data, widths)
    h, w = x.shape[-2:]

    def backward(g):
        return (np.ascontiguousarray(g[..., top:top + h, left:left + w]),)

    return make_node(out, (x,), backward, "pad2d")


# -- resampling --------------------------------------------------------------

def upsample(x: Tensor, factor: int) -> Tensor:
    """Nearest-neighbour upsampling of the two trailing axes."""
    if factor < 1:
        raise ShapeError(f"upsample factor must be >= 1, got {factor}")
    if factor == 1:
        return x
    out = x.data.repeat(factor, axis=-2).repeat(factor, axis=-1)

    def backward(g):
        s = g.shape
        g = g.reshape(s[:-2] + (s[-2] // factor, factor, s[-1] // factor, factor))
        return (g.sum(axis=(-3, -1)),)

    return make_node(out, (x,), backward, "upsample")


def downsample(x: Tensor, factor: int) -> Tensor:
    """Nearest-neighbour downsampling: keeps the top-left pixel of each cell."""
    h, w = x.shape[-2:]
    if h % factor or w % factor:
        raise ShapeError(f"spatial size {h}x{w} is not divisible by {factor}")
    out = np.ascontiguousarray(x.data[..., ::factor, ::factor])
    shape = x.shape

    def backward(g):
        gx = np.zeros(shape)
        gx[..., ::factor, ::factor] = g
        return (gx,)

    return make_node(out, (x,), backward, "downsample")


# -- normalization -----------------------------------------------------------

def batchnorm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
              running_var: np.ndarray, training: bool, momentum: float = 0.9,
              eps: float = 1e-5) -> Tensor:
    """Per-channel batch normalization over (N, H, W).

    In training mode the running statistics are updated in place as
    ``running = momentum * running + (1 - momentum) * batch``.
    """
    xd = x.data
    c = xd.shape[1]
    g_ = gamma.data.reshape(1, c, 1, 1)
    if training:
        mean = xd.mean(axis=(0, 2, 3))
        var = xd.var(axis=(0, 2, 3))
        m = xd.size // c
        running_mean *= momentum
        running_mean += (1 - momentum) * mean
        running_var *= momentum
        running_var += (1 - momentum) * var * (m / max(m - 1, 1))
    else:
        mean, var = running_mean, running_var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mean.reshape(1, c, 1, 1)) * inv.reshape(1, c, 1, 1)
    out = xhat * g_ + beta.data.reshape(1, c, 1, 1)

    def backward(g):
        gbeta = g.sum(axis=(0, 2, 3))
        ggamma = (g * xhat).sum(axis=(0, 2, 3))
        gxhat = g * g_
        if training:
            gx = (gxhat - gxhat.mean(axis=(0, 2, 3), keepdims=True)
                  - xhat * (gxhat * xhat).mean(axis=(0, 2, 3), keepdims=True))
            gx = gx * inv.reshape(1, c, 1, 1)
        else:
            gx = gxhat * inv.reshape(1, c, 1, 1)
        return gx, ggamma, gbeta

    return make_node(out, (x, gamma, beta), backward, "batchnorm")
