"""Differentiable operators on (batch, channel, height, width) tensors.

Each operator computes its forward result with numpy and registers an exact
reverse-mode rule through :func:`dinat_ir.tensor.make_result`.
"""
from __future__ import annotations

import math

import numpy as np
from scipy import special

from .errors import DimensionError, GeometryError
from .tensor import Tensor, as_tensor, make_result


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    if lead:
        g = g.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _pair(x, y):
    if isinstance(x, Tensor):
        return x, as_tensor(y, like=x)
    y = as_tensor(y)
    return as_tensor(x, like=y), y


# ---------------------------------------------------------------- elementwise

def add(x, y) -> Tensor:
    x, y = _pair(x, y)
    try:
        out = x.data + y.data
    except ValueError as e:
        raise DimensionError(f"cannot broadcast {x.shape} with {y.shape}") from e
    return make_result(out, (x, y), lambda g: (_unbroadcast(g, x.shape), _unbroadcast(g, y.shape)))


def sub(x, y) -> Tensor:
    x, y = _pair(x, y)
    try:
        out = x.data - y.data
    except ValueError as e:
        raise DimensionError(f"cannot broadcast {x.shape} with {y.shape}") from e
    return make_result(out, (x, y), lambda g: (_unbroadcast(g, x.shape), -_unbroadcast(g, y.shape)))


def mul(x, y) -> Tensor:
    x, y = _pair(x, y)
    try:
        out = x.data * y.data
    except ValueError as e:
        raise DimensionError(f"cannot broadcast {x.shape} with {y.shape}") from e

    def bw(g):
        gx = _unbroadcast(g * y.data, x.shape) if x.requires_grad else None
        gy = _unbroadcast(g * x.data, y.shape) if y.requires_grad else None
        return gx, gy

    return make_result(out, (x, y), bw)


def ew(x, y, kind: str) -> Tensor:
    if kind == "add":
        return add(x, y)
    if kind == "mul":
        return mul(x, y)
    raise ValueError(f"unknown elementwise kind {kind!r}")


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return make_result(out, (x,), lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    return make_result(np.log(x.data), (x,), lambda g: (g / x.data,))


def abs(x: Tensor) -> Tensor:  # noqa: A001
    return make_result(np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),))


def square(x: Tensor) -> Tensor:
    return make_result(x.data * x.data, (x,), lambda g: (2.0 * g * x.data,))


def sigmoid(x: Tensor) -> Tensor:
    out = special.expit(x.data)
    return make_result(out, (x,), lambda g: (g * out * (1.0 - out),))


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x: Tensor) -> Tensor:
    """Exact GELU, x * Phi(x)."""
    cdf = 0.5 * (1.0 + special.erf(x.data * _INV_SQRT2))
    out = x.data * cdf

    def bw(g):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * x.data * x.data)
        return (g * (cdf + x.data * pdf),)

    return make_result(out.astype(x.dtype, copy=False), (x,), bw)


def activation(x: Tensor, kind: str) -> Tensor:
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "gelu":
        return gelu(x)
    raise ValueError(f"unknown activation {kind!r}")


# ---------------------------------------------------------------- reductions / shape

def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    out = np.sum(x.data, axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape),)

    return make_result(np.asarray(out, dtype=x.dtype), (x,), bw)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = x.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = int(np.prod([x.shape[a] for a in axes]))
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(x: Tensor, shape) -> Tensor:
    return make_result(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes) -> Tensor:
    inv = np.argsort(axes)
    return make_result(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),))


def take(x: Tensor, index: np.ndarray, axis: int) -> Tensor:
    """Gather along ``axis`` with an integer index array; duplicates scatter-add on backward."""
    index = np.asarray(index)
    out = np.take(x.data, index, axis=axis)

    def bw(g):
        gx = np.zeros_like(x.data)
        ax = axis % x.ndim
        # move the gathered block to the front so add.at indexes a leading axis
        gm = np.moveaxis(g, tuple(range(ax, ax + index.ndim)), tuple(range(index.ndim)))
        gm = gm.reshape((-1,) + gm.shape[index.ndim:])
        gxm = np.moveaxis(gx, ax, 0)
        np.add.at(gxm, index.reshape(-1), gm)
        return (gx,)

    return make_result(out, (x,), bw)


def slice_axis(x: Tensor, start: int, stop: int, axis: int) -> Tensor:
    sl = [slice(None)] * x.ndim
    sl[axis] = slice(start, stop)
    sl = tuple(sl)

    def bw(g):
        gx = np.zeros_like(x.data)
        gx[sl] = g
        return (gx,)

    return make_result(x.data[sl], (x,), bw)


def chunk2(x: Tensor, axis: int = 1) -> tuple[Tensor, Tensor]:
    n = x.shape[axis]
    if n % 2:
        raise DimensionError(f"axis {axis} of extent {n} cannot be halved")
    return slice_axis(x, 0, n // 2, axis), slice_axis(x, n // 2, n, axis)


def concat(xs, axis: int = 1) -> Tensor:
    xs = list(xs)
    bounds = np.cumsum([0] + [t.shape[axis] for t in xs])
    try:
        out = np.concatenate([t.data for t in xs], axis=axis)
    except ValueError as e:
        raise DimensionError(str(e)) from e

    def bw(g):
        parts = []
        for i in range(len(xs)):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(bounds[i], bounds[i + 1])
            parts.append(g[tuple(sl)])
        return tuple(parts)

    return make_result(out, xs, bw)


def matmul(x: Tensor, y: Tensor) -> Tensor:
    x, y = _pair(x, y)
    out = np.matmul(x.data, y.data)

    def bw(g):
        gx = _unbroadcast(np.matmul(g, np.swapaxes(y.data, -1, -2)), x.shape) if x.requires_grad else None
        gy = _unbroadcast(np.matmul(np.swapaxes(x.data, -1, -2), g), y.shape) if y.requires_grad else None
        return gx, gy

    return make_result(out, (x, y), bw)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"axis {axis} out of range for {x.ndim}-d tensor")
    out = softmax_np(x.data, axis)

    def bw(g):
        return (out * (g - np.sum(g * out, axis=axis, keepdims=True)),)

    return make_result(out, (x,), bw)


def softmax_np(a: np.ndarray, axis: int) -> np.ndarray:
    e = np.exp(a - np.max(a, axis=axis, keepdims=True))
    return e / np.sum(e, axis=axis, keepdims=True)


# ---------------------------------------------------------------- image ops

def gap2d(x: Tensor) -> Tensor:
    """Global average pool over H and W, keeping (B, C, 1, 1)."""
    return mean(x, axis=(2, 3), keepdims=True)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each spatial position across channels, then apply the affine map."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    C = x.shape[1]
    if gamma.shape != (C,) or beta.shape != (C,):
        raise DimensionError(f"gamma/beta must be ({C},), got {gamma.shape}/{beta.shape}")
    mu = x.data.mean(axis=1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    g4 = gamma.data.reshape(1, C, 1, 1)
    out = xhat * g4 + beta.data.reshape(1, C, 1, 1)

    def bw(g):
        gxhat = g * g4
        gx = rstd * (gxhat - gxhat.mean(axis=1, keepdims=True)
                     - xhat * (gxhat * xhat).mean(axis=1, keepdims=True))
        ggamma = (g * xhat).sum(axis=(0, 2, 3)) if gamma.requires_grad else None
        gbeta = g.sum(axis=(0, 2, 3)) if beta.requires_grad else None
        return gx, ggamma, gbeta

    return make_result(out, (x, gamma, beta), bw)


def _conv_core(x: Tensor, w: Tensor, bias: Tensor | None, stride: int,
               pad: tuple[int, int], groups: int) -> Tensor:
    if x.ndim != 4 or w.ndim != 4:
        raise DimensionError(f"conv expects 4-d input and weight, got {x.shape} and {w.shape}")
    if stride < 1 or min(pad) < 0 or groups < 1:
        raise ValueError("stride must be >= 1, padding >= 0, groups >= 1")
    B, C, H, W = x.shape
    O, Cg, kh, kw = w.shape
    if C % groups or O % groups or C // groups != Cg:
        raise DimensionError(f"input channels {C} / groups {groups} do not match weight {w.shape}")
    if bias is not None and bias.shape != (O,):
        raise DimensionError(f"bias must be ({O},), got {bias.shape}")
    ph, pw = pad
    Ho = (H + 2 * ph - kh) // stride + 1
    Wo = (W + 2 * pw - kw) // stride + 1
    if Ho <= 0 or Wo <= 0:
        raise GeometryError(f"kernel {kh}x{kw} does not fit input {H}x{W} with padding {pad}")
    Og = O // groups
    depthwise = Cg == 1 and Og == 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x.data
    hs, ws = stride * (Ho - 1) + 1, stride * (Wo - 1) + 1

    def window(a, i, j):
        return a[:, :, i:i + hs:stride, j:j + ws:stride]

    dtype = np.result_type(x.data, w.data)
    if depthwise:
        # one scratch buffer for every tap instead of a temporary per product
        out = np.zeros((B, O, Ho, Wo), dtype=dtype)
        tmp = np.empty_like(out)
        for i in range(kh):
            for j in range(kw):
                np.multiply(window(xp, i, j), w.data[:, 0, i, j].reshape(1, O, 1, 1), out=tmp)
                out += tmp
    else:
        # im2col: (B, groups, Cg*kh*kw, Ho*Wo), rows ordered (c, i, j) like w
        if kh == kw == 1 and stride == 1:
            cols = xp.reshape(B, groups, Cg, Ho * Wo)
        else:
            cols = np.empty((B, C, kh, kw, Ho, Wo), dtype=xp.dtype)
            for i in range(kh):
                for j in range(kw):
                    cols[:, :, i, j] = window(xp, i, j)
            cols = cols.reshape(B, groups, Cg * kh * kw, Ho * Wo)
        w2 = np.ascontiguousarray(w.data.reshape(groups, Og, Cg * kh * kw))
        out = np.matmul(w2, cols).reshape(B, O, Ho, Wo)
    if bias is not None:
        out += bias.data.reshape(1, O, 1, 1)

    def bw(g):
        gxp = np.zeros_like(xp) if x.requires_grad else None
        gw = np.zeros_like(w.data) if w.requires_grad else None
        if depthwise:
            tmp = np.empty(g.shape, dtype=np.result_type(g, w.data))
            for i in range(kh):
                for j in range(kw):
                    if gxp is not None:
                        np.multiply(g, w.data[:, 0, i, j].reshape(1, O, 1, 1), out=tmp)
                        window(gxp, i, j)[...] += tmp
                    if gw is not None:
                        np.multiply(g, window(xp, i, j), out=tmp)
                        gw[:, 0, i, j] = tmp.sum(axis=(0, 2, 3))
        else:
            gg = np.ascontiguousarray(g).reshape(B, groups, Og, Ho * Wo)
            if gw is not None:
                gw = np.matmul(gg, np.swapaxes(cols, -1, -2)).sum(axis=0).reshape(w.shape)
            if gxp is not None:
                gcols = np.matmul(np.ascontiguousarray(np.swapaxes(w2, -1, -2)), gg)
                if kh == kw == 1 and stride == 1:
                    gxp = gcols.reshape(xp.shape)
                else:
                    gcols = gcols.reshape(B, C, kh, kw, Ho, Wo)
                    for i in range(kh):
                        for j in range(kw):
                            window(gxp, i, j)[...] += gcols[:, :, i, j]
        gx = None
        if gxp is not None:
            gx = gxp[:, :, ph:ph + H, pw:pw + W] if (ph or pw) else gxp
        gb = g.sum(axis=(0, 2, 3)) if bias is not None and bias.requires_grad else None
        return (gx, gw) + ((gb,) if bias is not None else ())

    inputs = (x, w) + ((bias,) if bias is not None else ())
    return make_result(out, inputs, bw)


def conv2d(x: Tensor, w: Tensor, bias: Tensor | None = None, stride: int = 1,
           padding: int = 0, groups: int = 1) -> Tensor:
    """2-D cross-correlation with zero padding (deep-learning convention)."""
    return _conv_core(x, w, bias, stride, (padding, padding), groups)


def conv1d(x: Tensor, w: Tensor, bias: Tensor | None = None, padding: int = 0) -> Tensor:
    if x.ndim != 3 or w.ndim != 3:
        raise DimensionError(f"conv1d expects (B,C,L) input and (O,C,k) weight, got {x.shape}, {w.shape}")
    B, C, L = x.shape
    O, Ci, kl = w.shape
    y = _conv_core(reshape(x, (B, C, 1, L)), reshape(w, (O, Ci, 1, kl)), bias, 1, (0, padding), 1)
    return reshape(y, (B, O, y.shape[-1]))


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    B, C, H, W = x.shape
    if C % (r * r):
        raise DimensionError(f"channels {C} not divisible by {r * r}")
    c = C // (r * r)
    y = x.data.reshape(B, c, r, r, H, W).transpose(0, 1, 4, 2, 5, 3).reshape(B, c, H * r, W * r)

    def bw(g):
        return (g.reshape(B, c, H, r, W, r).transpose(0, 1, 3, 5, 2, 4).reshape(B, C, H, W),)

    return make_result(y, (x,), bw)


def pixel_unshuffle(x: Tensor, r: int) -> Tensor:
    B, C, H, W = x.shape
    if H % r or W % r:
        raise DimensionError(f"spatial extent {H}x{W} not divisible by {r}")
    h, w = H // r, W // r
    y = x.data.reshape(B, C, h, r, w, r).transpose(0, 1, 3, 5, 2, 4).reshape(B, C * r * r, h, w)

    def bw(g):
        return (g.reshape(B, C, r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(B, C, H, W),)

    return make_result(y, (x,), bw)
