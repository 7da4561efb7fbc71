"""Differentiable operations on :class:`Tensor`.

Image-like tensors are laid out ``[N, C, H, W]``; most spatial ops also
accept an unbatched ``[C, H, W]`` input and return the same rank.
"""

from __future__ import annotations

from typing import Optional, Sequence, Union

import numpy as np

from .counters import record_macs
from .tensor import ContractError, ShapeError, Tensor, as_tensor, make_result

Scalar = Union[int, float]


def _wrap(x, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return as_tensor(x, dtype=dtype)


# --------------------------------------------------------------- elementwise
def add(a, b) -> Tensor:
    a = _wrap(a, b if isinstance(b, Tensor) else None)
    b = _wrap(b, a)
    return make_result(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    a = _wrap(a, b if isinstance(b, Tensor) else None)
    b = _wrap(b, a)
    return make_result(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b) -> Tensor:
    a = _wrap(a, b if isinstance(b, Tensor) else None)
    b = _wrap(b, a)
    ad, bd = a.data, b.data

    def bw(g):
        return (g * bd if a.requires_grad else None, g * ad if b.requires_grad else None)

    return make_result(ad * bd, (a, b), bw)


def div(a, b) -> Tensor:
    a = _wrap(a, b if isinstance(b, Tensor) else None)
    b = _wrap(b, a)
    ad, bd = a.data, b.data
    out = ad / bd

    def bw(g):
        return (g / bd if a.requires_grad else None, -g * out / bd if b.requires_grad else None)

    return make_result(out, (a, b), bw)


def neg(a: Tensor) -> Tensor:
    return make_result(-a.data, (a,), lambda g: (-g,))


def power(a: Tensor, exponent: Scalar) -> Tensor:
    ad = a.data
    return make_result(ad**exponent, (a,), lambda g: (g * exponent * ad ** (exponent - 1),))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return make_result(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    ad = a.data
    return make_result(np.log(ad), (a,), lambda g: (g / ad,))


def abs(a: Tensor) -> Tensor:
    ad = a.data
    return make_result(np.abs(ad), (a,), lambda g: (g * np.sign(ad),))


def relu(a: Tensor) -> Tensor:
    ad = a.data
    return make_result(np.maximum(ad, 0), (a,), lambda g: (g * (ad > 0),))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return make_result(out, (a,), lambda g: (g * (1 - out * out),))


def sigmoid(a: Tensor) -> Tensor:
    ad = a.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(ad))
    out = np.where(ad >= 0, 1 / (1 + e), e / (1 + e)).astype(ad.dtype, copy=False)
    return make_result(out, (a,), lambda g: (g * out * (1 - out),))


def cast(a: Tensor, dtype) -> Tensor:
    src = a.dtype
    return make_result(a.data.astype(dtype), (a,), lambda g: (g.astype(src),))


# ---------------------------------------------------------------- reductions
def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = a.shape
    axes = _norm_axes(axis, a.ndim)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape),)

    return make_result(a.data.sum(axis=axes, keepdims=keepdims), (a,), bw)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    return sum(a, axis=axes, keepdims=keepdims) * (1.0 / count)


# --------------------------------------------------------------------- shape
def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    src = a.shape
    return make_result(a.data.reshape(shape), (a,), lambda g: (g.reshape(src),))


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return make_result(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def _is_advanced(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray, Tensor)) for i in items)


def getitem(a: Tensor, index) -> Tensor:
    if isinstance(index, Tensor):
        index = index.data.astype(np.int64)
    shape, dtype = a.shape, a.dtype
    advanced = _is_advanced(index)

    def bw(g):
        out = np.zeros(shape, dtype=dtype)
        if advanced:
            np.add.at(out, index, g)
        else:
            out[index] = g
        return (out,)

    return make_result(a.data[index], (a,), bw)


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat needs at least one tensor")
    ndim = tensors[0].ndim
    axis = axis % ndim
    for t in tensors[1:]:
        if t.ndim != ndim or any(t.shape[i] != tensors[0].shape[i] for i in range(ndim) if i != axis):
            raise ShapeError(
                f"concat along axis {axis}: incompatible shapes {[tuple(x.shape) for x in tensors]}"
            )
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return make_result(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    n = len(tensors)

    def bw(g):
        ax = axis % g.ndim
        return tuple(np.take(g, i, axis=ax) for i in range(n))

    return make_result(np.stack([t.data for t in tensors], axis=axis), tensors, bw)


def split(a: Tensor, sizes: Sequence[int], axis: int = 1) -> list:
    out, start = [], 0
    axis = axis % a.ndim
    for s in sizes:
        idx = [slice(None)] * a.ndim
        idx[axis] = slice(start, start + s)
        out.append(getitem(a, tuple(idx)))
        start += s
    if start != a.shape[axis]:
        raise ShapeError(f"split sizes {list(sizes)} do not cover axis {axis} of shape {a.shape}")
    return out


def pad2d(a: Tensor, pad, mode: str = "zeros") -> Tensor:
    """Pad the last two axes. ``pad`` is an int or ``(top, bottom, left, right)``."""
    if isinstance(pad, int):
        pad = (pad, pad, pad, pad)
    pt, pb, pl, pr = pad
    if mode not in ("zeros", "replicate"):
        raise ContractError(f"unknown pad mode {mode!r}")
    H, W = a.shape[-2:]
    widths = [(0, 0)] * (a.ndim - 2) + [(pt, pb), (pl, pr)]
    out = np.pad(a.data, widths, mode="constant" if mode == "zeros" else "edge")

    def bw(g):
        gc = g[..., pt : pt + H, pl : pl + W]
        if mode == "zeros":
            return (gc,)
        gc = gc.copy()
        if pl:
            gc[..., :, 0] += g[..., pt : pt + H, :pl].sum(-1)
        if pr:
            gc[..., :, -1] += g[..., pt : pt + H, pl + W :].sum(-1)
        if pt:
            row = g[..., :pt, :]
            folded = row[..., pl : pl + W].sum(-2)
            folded[..., 0] += row[..., :pl].sum((-1, -2))
            folded[..., -1] += row[..., pl + W :].sum((-1, -2))
            gc[..., 0, :] += folded
        if pb:
            row = g[..., pt + H :, :]
            folded = row[..., pl : pl + W].sum(-2)
            folded[..., 0] += row[..., :pl].sum((-1, -2))
            folded[..., -1] += row[..., pl + W :].sum((-1, -2))
            gc[..., -1, :] += folded
        return (gc,)

    return make_result(out, (a,), bw)


# ------------------------------------------------------------ linear algebra
def matmul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: cannot contract shapes {a.shape} and {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise ShapeError(f"matmul: batch dims of {a.shape} and {b.shape} do not broadcast") from exc
    record_macs(out.size * a.shape[-1])
    ad, bd = a.data, b.data

    def bw(g):
        ga = np.matmul(g, np.swapaxes(bd, -1, -2)) if a.requires_grad else None
        gb = np.matmul(np.swapaxes(ad, -1, -2), g) if b.requires_grad else None
        return ga, gb

    return make_result(out, (a, b), bw)


# ---------------------------------------------------------------- convolution
def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation (no kernel flip) via im2col + one GEMM."""
    unbatched = x.ndim == 3
    xd = x.data[None] if unbatched else x.data
    wd = weight.data
    N, C, H, W = xd.shape
    Co, Ci, kh, kw = wd.shape
    if Ci != C:
        raise ShapeError(f"conv2d: input has {C} channels, weight {tuple(wd.shape)} expects {Ci}")
    Hp, Wp = H + 2 * padding, W + 2 * padding
    if kh > Hp or kw > Wp:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} larger than padded input {Hp}x{Wp}")
    Ho = (Hp - kh) // stride + 1
    Wo = (Wp - kw) // stride + 1

    xt = xd.transpose(1, 0, 2, 3)  # C, N, H, W
    if padding:
        xt = np.pad(xt, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    if kh == 1 and kw == 1 and stride == 1:
        cols = np.ascontiguousarray(xt).reshape(C, N * Ho * Wo)
    else:
        cols = np.empty((C, kh, kw, N, Ho, Wo), dtype=xd.dtype)
        hs, ws = stride * (Ho - 1) + 1, stride * (Wo - 1) + 1
        for i in range(kh):
            for j in range(kw):
                cols[:, i, j] = xt[:, :, i : i + hs : stride, j : j + ws : stride]
        cols = cols.reshape(C * kh * kw, N * Ho * Wo)
    w2 = wd.reshape(Co, -1)
    out = w2 @ cols
    if bias is not None:
        out += bias.data[:, None]
    record_macs(Co * C * kh * kw * N * Ho * Wo)
    out = out.reshape(Co, N, Ho, Wo).transpose(1, 0, 2, 3)
    if unbatched:
        out = out[0]

    def bw(g):
        if unbatched:
            g = g[None]
        g2 = g.transpose(1, 0, 2, 3).reshape(Co, -1)
        gw = (g2 @ cols.T).reshape(wd.shape) if weight.requires_grad else None
        gb = g2.sum(axis=1) if bias is not None and bias.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = w2.T @ g2
            if kh == 1 and kw == 1 and stride == 1:
                gxt = gcols.reshape(C, N, Hp, Wp)
            else:
                gcols = gcols.reshape(C, kh, kw, N, Ho, Wo)
                gxt = np.zeros((C, N, Hp, Wp), dtype=gcols.dtype)
                for i in range(kh):
                    for j in range(kw):
                        gxt[:, :, i : i + hs : stride, j : j + ws : stride] += gcols[:, i, j]
            if padding:
                gxt = gxt[:, :, padding : padding + H, padding : padding + W]
            gx = gxt.transpose(1, 0, 2, 3)
            if unbatched:
                gx = gx[0]
        return (gx, gw, gb) if bias is not None else (gx, gw)

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return make_result(out, parents, bw)


# -------------------------------------------------------------- normalisation
def softmax(a: Tensor, axis: int = -1) -> Tensor:
    ad = a.data
    e = np.exp(ad - ad.max(axis=axis, keepdims=True))
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make_result(out, (a,), bw)


def instance_norm(x: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise each (sample, channel) plane to zero mean, unit variance."""
    axes = (-2, -1)
    xd = x.data
    mu = xd.mean(axis=axes, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def bw(g):
        gm = g.mean(axis=axes, keepdims=True)
        gxm = (g * xhat).mean(axis=axes, keepdims=True)
        return (inv * (g - gm - xhat * gxm),)

    return make_result(xhat, (x,), bw)


def batch_norm(
    x: Tensor,
    weight: Optional[Tensor],
    bias: Optional[Tensor],
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel normalisation over batch and spatial axes.

    In training mode batch statistics are used and the running buffers are
    updated in place; in eval mode the running buffers are used.
    """
    xd = x.data
    C = xd.shape[1]
    shape = (1, C, 1, 1)
    axes = (0, 2, 3)
    if training:
        mu = xd.mean(axis=axes, keepdims=True)
        xc = xd - mu
        var = (xc * xc).mean(axis=axes, keepdims=True)
        n = xd.size // C
        running_mean *= 1 - momentum
        running_mean += momentum * mu.reshape(C)
        running_var *= 1 - momentum
        running_var += momentum * var.reshape(C) * (n / max(n - 1, 1))
    else:
        mu = running_mean.reshape(shape).astype(xd.dtype)
        var = running_var.reshape(shape).astype(xd.dtype)
        xc = xd - mu
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    wd = weight.data.reshape(shape) if weight is not None else 1.0
    out = xhat * wd
    if bias is not None:
        out = out + bias.data.reshape(shape)

    def bw(g):
        gxhat = g * wd
        if training:
            gm = gxhat.mean(axis=axes, keepdims=True)
            gxm = (gxhat * xhat).mean(axis=axes, keepdims=True)
            gx = inv * (gxhat - gm - xhat * gxm)
        else:
            gx = gxhat * inv
        grads = [gx]
        if weight is not None:
            grads.append((g * xhat).sum(axis=axes))
        if bias is not None:
            grads.append(g.sum(axis=axes))
        return tuple(grads)

    parents = [x] + [p for p in (weight, bias) if p is not None]
    return make_result(out, parents, bw)


# ------------------------------------------------------------------- pooling
def avgpool_lastdim(t: Tensor) -> Tensor:
    """Mean of adjacent pairs along the last axis (kernel 2, stride 2).

    Odd lengths replicate the final element first, so the output has
    ``ceil(L / 2)`` entries.
    """
    td = t.data
    L = td.shape[-1]
    odd = L % 2 == 1
    if odd:
        td = np.concatenate([td, td[..., -1:]], axis=-1)
    out = 0.5 * (td[..., 0::2] + td[..., 1::2])

    def bw(g):
        half = 0.5 * g
        full = np.repeat(half, 2, axis=-1)
        if odd:
            full[..., -2] += full[..., -1]
            full = full[..., :-1]
        return (full,)

    return make_result(out, (t,), bw)


def avgpool2x(t: Tensor) -> Tensor:
    """2x2 mean pooling over the last two axes."""
    td = t.data
    H, W = td.shape[-2:]
    if H % 2 or W % 2:
        raise ShapeError(f"2x downsampling needs even extents, got {H}x{W}")
    lead = td.shape[:-2]
    out = td.reshape(*lead, H // 2, 2, W // 2, 2).mean(axis=(-3, -1))

    def bw(g):
        g4 = np.broadcast_to((0.25 * g)[..., :, None, :, None], (*lead, H // 2, 2, W // 2, 2))
        return (g4.reshape(*lead, H, W),)

    return make_result(out, (t,), bw)


def _up2_axis(a: np.ndarray, axis: int) -> np.ndarray:
    a = np.moveaxis(a, axis, -1)
    prev = np.concatenate([a[..., :1], a[..., :-1]], axis=-1)
    nxt = np.concatenate([a[..., 1:], a[..., -1:]], axis=-1)
    out = np.empty(a.shape[:-1] + (2 * a.shape[-1],), dtype=a.dtype)
    out[..., 0::2] = 0.75 * a + 0.25 * prev
    out[..., 1::2] = 0.75 * a + 0.25 * nxt
    return np.moveaxis(out, -1, axis)


def _up2_axis_adjoint(g: np.ndarray, axis: int) -> np.ndarray:
    g = np.moveaxis(g, axis, -1)
    ge, go = g[..., 0::2], g[..., 1::2]
    da = 0.75 * (ge + go)
    da[..., :-1] += 0.25 * ge[..., 1:]
    da[..., 0] += 0.25 * ge[..., 0]
    da[..., 1:] += 0.25 * go[..., :-1]
    da[..., -1] += 0.25 * go[..., -1]
    return np.moveaxis(da, -1, axis)


def upsample2x(t: Tensor) -> Tensor:
    """Bilinear 2x upsampling of the last two axes (half-pixel centres, edge clamp)."""
    out = _up2_axis(_up2_axis(t.data, -1), -2)

    def bw(g):
        return (_up2_axis_adjoint(_up2_axis_adjoint(g, -2), -1),)

    return make_result(out, (t,), bw)


def interpolate2d(t: Tensor, factor: float) -> Tensor:
    """Resample by ``factor``: powers of two up (bilinear) or down (2x2 mean)."""
    if factor == 1:
        return t
    if factor >= 2 and float(factor).is_integer() and (int(factor) & (int(factor) - 1)) == 0:
        for _ in range(int(np.log2(factor))):
            t = upsample2x(t)
        return t
    if 0 < factor < 1 and float(1 / factor).is_integer() and (int(1 / factor) & (int(1 / factor) - 1)) == 0:
        for _ in range(int(np.log2(1 / factor))):
            t = avgpool2x(t)
        return t
    H, W = t.shape[-2:]
    raise ShapeError(f"interpolate2d: factor {factor} gives non-integral extents from {H}x{W}")


# ------------------------------------------------------------------ sampling
def sample_lastdim(volume: Tensor, x: Tensor) -> Tensor:
    """Linearly interpolate ``volume[..., :]`` at real positions ``x[..., k]``.

    Leading axes of ``volume`` and ``x`` must agree. Each of the two grid
    neighbours that falls outside ``[0, L-1]`` contributes zero. Gradients
    flow to both the volume entries and the positions.
    """
    vd, xd = volume.data, x.data
    if vd.shape[:-1] != xd.shape[:-1]:
        raise ShapeError(f"sample_lastdim: leading dims of {vd.shape} and {xd.shape} differ")
    L = vd.shape[-1]
    x0f = np.floor(xd)
    w = (xd - x0f).astype(vd.dtype, copy=False)
    with np.errstate(invalid="ignore"):  # non-finite positions are caught by the caller's loss check
        i0 = x0f.astype(np.int64)
    i1 = i0 + 1
    ok0 = (i0 >= 0) & (i0 < L)
    ok1 = (i1 >= 0) & (i1 < L)
    v0 = np.take_along_axis(vd, np.clip(i0, 0, L - 1), axis=-1) * ok0
    v1 = np.take_along_axis(vd, np.clip(i1, 0, L - 1), axis=-1) * ok1
    out = (1 - w) * v0 + w * v1

    def bw(g):
        gv = gx = None
        if volume.requires_grad:
            lead = int(np.prod(vd.shape[:-1]))
            base = (np.arange(lead) * L).reshape(xd.shape[:-1] + (1,))
            idx = np.concatenate([(base + np.clip(i0, 0, L - 1)).ravel(), (base + np.clip(i1, 0, L - 1)).ravel()])
            wts = np.concatenate([(g * (1 - w) * ok0).ravel(), (g * w * ok1).ravel()])
            gv = np.bincount(idx, weights=wts, minlength=lead * L).reshape(vd.shape).astype(vd.dtype)
        if x.requires_grad:
            gx = (g * (v1 - v0)).astype(xd.dtype, copy=False)
        return gv, gx

    return make_result(out, (volume, x), bw)


def bilinear_sample_1d(row, x) -> Tensor:
    """Sample a 1-D row at a single real coordinate (zero outside the row)."""
    row = _wrap(row)
    x = _wrap(x, row)
    if row.ndim != 1:
        raise ShapeError(f"bilinear_sample_1d expects a 1-D row, got shape {row.shape}")
    return reshape(sample_lastdim(row, reshape(x, (1,))), ())


def unfold3x3(t: Tensor) -> Tensor:
    """Stack the 3x3 neighbourhood of each pixel: ``[N, C, H, W] -> [N, C, 9, H, W]``.

    Borders are edge-replicated.
    """
    H, W = t.shape[-2:]
    p = pad2d(t, 1, mode="replicate")
    return stack([p[..., i : i + H, j : j + W] for i in range(3) for j in range(3)], axis=-3)
