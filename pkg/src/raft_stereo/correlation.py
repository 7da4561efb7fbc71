"""Row-wise correlation volume, its pooled pyramid and the lookup operator.

Disparity convention: left pixel ``(i, j)`` matches right pixel ``(i, j - d)``;
the volume's last axis indexes the right image's x coordinate, so lookups
sample at ``(j - d) / 2**k + offset`` on level ``k``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List

import numpy as np

from .autograd import ShapeError, Tensor
from .autograd import functional as F
from .autograd.counters import record_macs
from .autograd.tensor import make_result


@dataclass(frozen=True)
class LookupConfig:
    radius: int = 4
    levels: int = 4
    normalize: bool = True

    @property
    def channels(self) -> int:
        return self.levels * (2 * self.radius + 1)


def _batched(t: Tensor):
    return (F.reshape(t, (1,) + t.shape), True) if t.ndim == 3 else (t, False)


def build_volume(f: Tensor, g: Tensor, normalize: bool = True) -> Tensor:
    """``C[i, j, k] = <f[:, i, j], g[:, i, k]>`` (optionally divided by sqrt(D)).

    Features are ``[N, D, H, W]`` (or ``[D, H, W]``); the result is
    ``[N, H, W, W]`` (or ``[H, W, W]``), one matmul batched over rows.
    """
    if f.shape != g.shape:
        raise ShapeError(f"correlation features differ in shape: {f.shape} vs {g.shape}")
    f4, squeeze = _batched(f)
    g4, _ = _batched(g)
    D = f4.shape[1]
    left = F.transpose(f4, (0, 2, 3, 1))  # N H W D
    right = F.transpose(g4, (0, 2, 1, 3))  # N H D W
    corr = F.matmul(left, right)
    if normalize:
        corr = corr * (1.0 / np.sqrt(D))
    return corr[0] if squeeze else corr


def build_pyramid(volume: Tensor, levels: int = 4) -> List[Tensor]:
    """Repeatedly average-pool the last (right-x) axis; spatial axes stay intact."""
    pyramid = [volume]
    for _ in range(levels - 1):
        pyramid.append(F.avgpool_lastdim(pyramid[-1]))
    return pyramid


def _grid(disp: Tensor, radius: int, level: int) -> Tensor:
    """Sampling positions ``(j - d) / 2**level + o`` with shape ``[N, H, W, 2r+1]``."""
    N, _, H, W = disp.shape
    cols = np.arange(W, dtype=disp.dtype).reshape(1, 1, W)
    centre = (Tensor(cols, dtype=disp.dtype) - F.reshape(disp, (N, H, W))) * (1.0 / 2**level)
    offsets = Tensor(np.arange(-radius, radius + 1, dtype=disp.dtype))
    return F.reshape(centre, (N, H, W, 1)) + offsets


def lookup(pyramid: List[Tensor], disp: Tensor, radius: int = 4) -> Tensor:
    """Interpolated correlation around the current disparity on every level.

    ``disp`` is ``[N, 1, H, W]`` at feature resolution; returns
    ``[N, levels*(2r+1), H, W]`` with level-major channel order.
    """
    N, _, H, W = disp.shape
    out = []
    for k, vol in enumerate(pyramid):
        if vol.ndim == 3:
            vol = F.reshape(vol, (1,) + vol.shape)
        if vol.shape[:3] != (N, H, W):
            raise ShapeError(f"pyramid level {k} has shape {vol.shape}, disparity is {disp.shape}")
        out.append(F.sample_lastdim(vol, _grid(disp, radius, k)))
    feats = F.concat(out, axis=-1)
    return F.transpose(feats, (0, 3, 1, 2))


def _sample_rows(gk: np.ndarray, pos: np.ndarray):
    """Gather ``gk[n, :, i, floor(pos)]`` and the next column with zero padding."""
    Wk = gk.shape[-1]
    x0f = np.floor(pos)
    w = (pos - x0f).astype(gk.dtype, copy=False)
    i0 = x0f.astype(np.int64)
    i1 = i0 + 1
    ok0 = ((i0 >= 0) & (i0 < Wk)).astype(gk.dtype)
    ok1 = ((i1 >= 0) & (i1 < Wk)).astype(gk.dtype)
    c0 = np.clip(i0, 0, Wk - 1)[:, None]
    c1 = np.clip(i1, 0, Wk - 1)[:, None]
    g0 = np.take_along_axis(gk, c0, axis=-1)
    g1 = np.take_along_axis(gk, c1, axis=-1)
    return w, ok0, ok1, c0, c1, g0, g1


def _corr_sample(f: Tensor, gk: Tensor, pos: Tensor, scale: float) -> Tensor:
    """``out[n,i,j,o] = scale * <f[n,:,i,j], lerp(gk[n,:,i,:], pos[n,i,j,o])>`` without a volume.

    Loops over offsets so that peak memory stays at a few feature-map sized
    buffers.
    """
    fd, gd, xd = f.data, gk.data, pos.data
    N, D, H, W = fd.shape
    K = xd.shape[-1]
    out = np.empty((N, H, W, K), dtype=fd.dtype)
    for o in range(K):
        w, ok0, ok1, _, _, g0, g1 = _sample_rows(gd, xd[..., o])
        a = np.einsum("ndhw,ndhw->nhw", fd, g0) * ok0
        b = np.einsum("ndhw,ndhw->nhw", fd, g1) * ok1
        out[..., o] = scale * ((1 - w) * a + w * b)
    record_macs(2 * N * D * H * W * K)

    def bw(grad):
        gf = np.zeros_like(fd) if f.requires_grad else None
        gg = np.zeros(gd.size, dtype=np.float64) if gk.requires_grad else None
        gx = np.empty_like(xd) if pos.requires_grad else None
        Wk = gd.shape[-1]
        base = None
        if gg is not None:
            base = ((np.arange(N)[:, None, None, None] * D + np.arange(D)[None, :, None, None]) * H
                    + np.arange(H)[None, None, :, None]) * Wk
        for o in range(K):
            w, ok0, ok1, c0, c1, g0, g1 = _sample_rows(gd, xd[..., o])
            go = grad[..., o] * scale
            a0 = go * (1 - w) * ok0
            a1 = go * w * ok1
            if gx is not None:
                a = np.einsum("ndhw,ndhw->nhw", fd, g0) * ok0
                b = np.einsum("ndhw,ndhw->nhw", fd, g1) * ok1
                gx[..., o] = go * (b - a)
            if gf is not None:
                gf += a0[:, None] * g0 + a1[:, None] * g1
            if gg is not None:
                gg += np.bincount((base + c0).ravel(), weights=(fd * a0[:, None]).ravel(), minlength=gd.size)
                gg += np.bincount((base + c1).ravel(), weights=(fd * a1[:, None]).ravel(), minlength=gd.size)
        if gg is not None:
            gg = gg.reshape(gd.shape).astype(gd.dtype)
        return gf, gg, gx

    return make_result(out, (f, gk, pos), bw)


def lookup_on_the_fly(f: Tensor, g: Tensor, disp: Tensor, cfg: LookupConfig = LookupConfig()) -> Tensor:
    """Same result as ``lookup(build_pyramid(build_volume(f, g)), disp)``.

    Pooling the volume's last axis equals pooling the right features along
    x, so each level only needs width-pooled right features and per-pixel
    dot products; the ``W x W`` volume is never formed.
    """
    if f.shape != g.shape:
        raise ShapeError(f"correlation features differ in shape: {f.shape} vs {g.shape}")
    f4, _ = _batched(f)
    g4, _ = _batched(g)
    D = f4.shape[1]
    scale = 1.0 / np.sqrt(D) if cfg.normalize else 1.0
    out, gk = [], g4
    for k in range(cfg.levels):
        if k:
            gk = F.avgpool_lastdim(gk)
        out.append(_corr_sample(f4, gk, _grid(disp, cfg.radius, k), scale))
    return F.transpose(F.concat(out, axis=-1), (0, 3, 1, 2))


class CorrelationPyramid:
    """Precomputed pyramid; calling it with a disparity performs the lookup."""

    def __init__(self, f: Tensor, g: Tensor, cfg: LookupConfig = LookupConfig()):
        self.cfg = cfg
        self.levels = build_pyramid(build_volume(f, g, cfg.normalize), cfg.levels)

    def __call__(self, disp: Tensor) -> Tensor:
        return lookup(self.levels, disp, self.cfg.radius)


class OnTheFlyCorrelation:
    """Memory-lean alternative to :class:`CorrelationPyramid` with the same interface."""

    def __init__(self, f: Tensor, g: Tensor, cfg: LookupConfig = LookupConfig()):
        self.cfg, self.f, self.g = cfg, f, g

    def __call__(self, disp: Tensor) -> Tensor:
        return lookup_on_the_fly(self.f, self.g, disp, self.cfg)


def make_correlation(f: Tensor, g: Tensor, cfg: LookupConfig, on_the_fly: bool = False):
    return (OnTheFlyCorrelation if on_the_fly else CorrelationPyramid)(f, g, cfg)
