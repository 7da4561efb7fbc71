"""Photometric and geometric augmentation of stereo samples."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from ..autograd import ContractError
from .synthetic import SyntheticSample

_LUMA = np.array([0.299, 0.587, 0.114], dtype=np.float64)


@dataclass(frozen=True)
class AugmentConfig:
    saturation: Optional[Tuple[float, float]] = (0.0, 1.4)
    stretch: Optional[Tuple[float, float]] = (2 ** -0.2, 2 ** 0.4)
    vertical: float = 0.5  # max |shift| of the right image in pixels
    crop: Optional[Tuple[int, int]] = (64, 128)


def adjust_saturation(img: np.ndarray, s: float) -> np.ndarray:
    """Blend towards the luma image; s=0 is greyscale, s=1 the identity."""
    grey = np.tensordot(_LUMA, img, axes=(0, 0))[None]
    return np.clip(grey + s * (img - grey), 0.0, 1.0)


def stretch_x(sample: SyntheticSample, sigma: float) -> SyntheticSample:
    """Scale the x axis by ``sigma`` about pixel centres; disparities scale by the same factor."""
    H, W = sample.disp.shape
    Wn = max(int(np.floor(W * sigma)), 1)
    src = (np.arange(Wn) + 0.5) / sigma - 0.5
    src = np.clip(src, 0, W - 1)
    x0 = np.minimum(np.floor(src).astype(int), W - 2)
    t = (src - x0)[None, None, :]

    def resample(img):
        return img[..., x0] * (1 - t) + img[..., x0 + 1] * t

    nearest = np.clip(np.floor(src + 0.5).astype(int), 0, W - 1)
    disp = sample.disp[:, nearest] * np.float32(sigma)
    return SyntheticSample(resample(sample.left), resample(sample.right), disp, sample.mask[:, nearest])


def shift_rows(img: np.ndarray, dy: float) -> np.ndarray:
    """Sub-pixel vertical shift with edge clamping: out[i] = img[i + dy]."""
    H = img.shape[-2]
    src = np.clip(np.arange(H) + dy, 0, H - 1)
    y0 = np.minimum(np.floor(src).astype(int), max(H - 2, 0))
    t = (src - y0)[:, None]
    y1 = np.minimum(y0 + 1, H - 1)
    return img[:, y0] * (1 - t) + img[:, y1] * t


def random_crop(sample: SyntheticSample, size: Tuple[int, int], rng: np.random.Generator) -> SyntheticSample:
    ch, cw = size
    H, W = sample.disp.shape
    if ch > H or cw > W:
        raise ContractError(f"crop {ch}x{cw} larger than sample {H}x{W}")
    y = int(rng.integers(0, H - ch + 1))
    x = int(rng.integers(0, W - cw + 1))
    win = (slice(y, y + ch), slice(x, x + cw))
    return SyntheticSample(sample.left[(slice(None),) + win], sample.right[(slice(None),) + win],
                           sample.disp[win], sample.mask[win])


def augment(sample: SyntheticSample, cfg: AugmentConfig, rng: np.random.Generator) -> SyntheticSample:
    """Saturation, horizontal stretch, right-image vertical jitter, crop, in that order.

    All randomness comes from ``rng`` so a fixed seed reproduces the sample bit for bit.
    """
    left, right = sample.left.astype(np.float64), sample.right.astype(np.float64)
    if cfg.saturation is not None:
        s = rng.uniform(*cfg.saturation)
        left, right = adjust_saturation(left, s), adjust_saturation(right, s)
    out = SyntheticSample(left, right, sample.disp, sample.mask)
    if cfg.stretch is not None:
        lo, hi = np.log2(cfg.stretch[0]), np.log2(cfg.stretch[1])
        out = stretch_x(out, float(2.0 ** rng.uniform(lo, hi)))
    if cfg.vertical > 0:
        dy = rng.uniform(-cfg.vertical, cfg.vertical)
        out = SyntheticSample(out.left, shift_rows(out.right, dy), out.disp, out.mask)
    if cfg.crop is not None:
        out = random_crop(out, cfg.crop, rng)
    return SyntheticSample(
        np.ascontiguousarray(out.left, dtype=np.float32),
        np.ascontiguousarray(out.right, dtype=np.float32),
        np.ascontiguousarray(out.disp, dtype=np.float32),
        np.ascontiguousarray(out.mask, dtype=bool),
    )
