"""Procedural stereo pairs with exact ground-truth disparity.

Convention: a left pixel ``(i, j)`` with disparity ``d`` is seen in the right
image at ``(i, j - d)``. The right image is rendered by backward warping:
every right pixel samples the (extended) left-frame texture at ``k + d``.

Modes
  a  fronto-parallel plane, constant disparity
  b  random rectangles at distinct depths over a background plane
     (piecewise-constant disparity, occlusions masked)
  c  slanted plane, disparity a linear ramp in x and y
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, List, Optional, Sequence

import numpy as np

from ..autograd import ContractError


@dataclass
class SyntheticSample:
    left: np.ndarray  # [3, H, W] float32 in [0, 1]
    right: np.ndarray
    disp: np.ndarray  # [H, W] float32, left-view disparity
    mask: np.ndarray  # [H, W] bool, True where the correspondence is visible


@dataclass(frozen=True)
class SyntheticConfig:
    height: int = 64
    width: int = 128
    max_disp: float = 16.0
    mode: str = "a"
    disparity: Optional[float] = None  # force the plane disparity in mode a

    def __post_init__(self):
        if self.mode not in ("a", "b", "c"):
            raise ContractError(f"unknown synthetic mode {self.mode!r}")
        if not 0 <= self.max_disp < self.width / 2:
            raise ContractError(f"max_disp must lie in [0, W/2), got {self.max_disp} for W={self.width}")


def _smooth_noise(rng: np.random.Generator, h: int, w: int, cell: int) -> np.ndarray:
    """Bilinearly interpolated uniform noise on a ``cell``-pixel lattice, [3, h, w]."""
    gh, gw = h // cell + 2, w // cell + 2
    coarse = rng.random((3, gh, gw))
    y = np.arange(h) / cell
    x = np.arange(w) / cell
    y0, x0 = np.floor(y).astype(int), np.floor(x).astype(int)
    ty, tx = (y - y0)[:, None], (x - x0)[None, :]
    c = coarse
    top = c[:, y0][:, :, x0] * (1 - tx) + c[:, y0][:, :, x0 + 1] * tx
    bot = c[:, y0 + 1][:, :, x0] * (1 - tx) + c[:, y0 + 1][:, :, x0 + 1] * tx
    return top * (1 - ty) + bot * ty


def random_texture(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    """Colour texture mixing coarse blobs with fine detail so every patch is distinctive."""
    tex = 0.45 * _smooth_noise(rng, h, w, 16) + 0.35 * _smooth_noise(rng, h, w, 4) + 0.2 * rng.random((3, h, w))
    lo = tex.min(axis=(1, 2), keepdims=True)
    hi = tex.max(axis=(1, 2), keepdims=True)
    return (tex - lo) / np.maximum(hi - lo, 1e-6)


def sample_columns(tex: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Linear interpolation of ``tex [3, H, Wt]`` at per-pixel column positions ``x [H, W]``."""
    Wt = tex.shape[-1]
    x = np.clip(x, 0, Wt - 1)
    x0 = np.minimum(np.floor(x).astype(int), Wt - 2)
    t = x - x0
    rows = np.arange(x.shape[0])[:, None]
    return tex[:, rows, x0] * (1 - t) + tex[:, rows, x0 + 1] * t


def _canvas_width(cfg: SyntheticConfig) -> int:
    return cfg.width + int(np.ceil(cfg.max_disp)) + 2


def _plane(rng, cfg: SyntheticConfig) -> SyntheticSample:
    H, W = cfg.height, cfg.width
    d = float(rng.uniform(0.0, cfg.max_disp)) if cfg.disparity is None else float(cfg.disparity)
    if not 0 <= d <= cfg.max_disp:
        raise ContractError(f"disparity {d} outside [0, {cfg.max_disp}]")
    tex = random_texture(rng, H, _canvas_width(cfg))
    cols = np.broadcast_to(np.arange(W, dtype=np.float64), (H, W))
    left = tex[:, :, :W]
    right = sample_columns(tex, cols + d)
    disp = np.full((H, W), d)
    mask = cols - d >= 0
    return _pack(left, right, disp, mask)


def _ramp(rng, cfg: SyntheticConfig) -> SyntheticSample:
    H, W = cfg.height, cfg.width
    span = cfg.max_disp
    gx = rng.uniform(-0.5, 0.5) * span / W
    gy = rng.uniform(-0.5, 0.5) * span / H
    ii, jj = np.mgrid[0:H, 0:W].astype(np.float64)
    raw = gx * jj + gy * ii
    c0 = rng.uniform(-raw.min(), span - raw.max())
    disp = c0 + raw
    tex = random_texture(rng, H, _canvas_width(cfg))
    # right pixel k on row i sees left column j with j - d(i, j) = k
    src = (jj + c0 + gy * ii) / (1.0 - gx)
    right = sample_columns(tex, src)
    left = tex[:, :, :W]
    mask = jj - disp >= 0
    return _pack(left, right, disp, mask)


def _rectangles(rng, cfg: SyntheticConfig) -> SyntheticSample:
    H, W = cfg.height, cfg.width
    Wc = _canvas_width(cfg)
    layers = [dict(d=rng.uniform(0.0, 0.5 * cfg.max_disp), box=(-np.inf, np.inf, -np.inf, np.inf))]
    for _ in range(int(rng.integers(2, 6))):
        w = rng.uniform(W / 8, W / 2.5)
        h = rng.uniform(H / 6, H / 2)
        x0 = rng.uniform(-w / 2, W - w / 2)
        y0 = rng.uniform(-h / 2, H - h / 2)
        layers.append(dict(d=rng.uniform(layers[0]["d"], cfg.max_disp), box=(y0, y0 + h, x0, x0 + w)))
    layers = [layers[0]] + sorted(layers[1:], key=lambda l: l["d"])  # far to near
    for layer in layers:
        layer["tex"] = random_texture(rng, H, Wc)

    ii, jj = np.mgrid[0:H, 0:W].astype(np.float64)
    left = np.zeros((3, H, W))
    right = np.zeros((3, H, W))
    disp = np.zeros((H, W))
    id_left = np.zeros((H, W), dtype=int)
    id_right = np.zeros((H, W), dtype=int)
    for idx, layer in enumerate(layers):
        y0, y1, x0, x1 = layer["box"]
        d = layer["d"]
        rows = (ii >= y0) & (ii < y1)
        cov_l = rows & (jj >= x0) & (jj < x1)
        cov_r = rows & (jj + d >= x0) & (jj + d < x1)
        left[:, cov_l] = layer["tex"][:, :, :W][:, cov_l]
        right[:, cov_r] = sample_columns(layer["tex"], jj + d)[:, cov_r]
        disp[cov_l] = d
        id_left[cov_l] = idx
        id_right[cov_r] = idx

    # visible iff both right pixels bracketing j - d belong to the same layer
    k = jj - disp
    k0 = np.floor(k).astype(int)
    frac = k - k0
    inside = (k >= 0) & (k0 <= W - 1) & ((frac == 0) | (k0 + 1 <= W - 1))
    k0c = np.clip(k0, 0, W - 1)
    k1c = np.clip(k0 + 1, 0, W - 1)
    rows = np.arange(H)[:, None]
    same = (id_right[rows, k0c] == id_left) & ((frac == 0) | (id_right[rows, k1c] == id_left))
    return _pack(left, right, disp, inside & same)


def _pack(left, right, disp, mask) -> SyntheticSample:
    return SyntheticSample(
        np.ascontiguousarray(left, dtype=np.float32),
        np.ascontiguousarray(right, dtype=np.float32),
        np.ascontiguousarray(disp, dtype=np.float32),
        np.ascontiguousarray(mask, dtype=bool),
    )


_GENERATORS = {"a": _plane, "b": _rectangles, "c": _ramp}


def generate_synthetic(rng: np.random.Generator, cfg: SyntheticConfig = SyntheticConfig()) -> SyntheticSample:
    return _GENERATORS[cfg.mode](rng, cfg)


def make_dataset(n: int, seed: int, modes: Sequence[str] = ("a", "b"), height: int = 64, width: int = 128,
                 max_disp: float = 16.0) -> List[SyntheticSample]:
    """Deterministic list of samples cycling through ``modes`` (used for validation)."""
    rng = np.random.default_rng(seed)
    return [generate_synthetic(rng, SyntheticConfig(height, width, max_disp, modes[i % len(modes)])) for i in range(n)]


@dataclass
class Batch:
    left: np.ndarray  # [B, 3, H, W]
    right: np.ndarray
    disp: np.ndarray  # [B, H, W]
    mask: np.ndarray


def collate(samples: Sequence[SyntheticSample]) -> Batch:
    return Batch(*(np.stack([getattr(s, k) for s in samples]) for k in ("left", "right", "disp", "mask")))


@dataclass
class SyntheticStream:
    """Endless batches of generated (and optionally augmented) samples."""

    batch: int = 2
    modes: Sequence[str] = ("a", "b")
    height: int = 80
    width: int = 160
    max_disp: float = 16.0
    seed: int = 0
    augment: Optional[object] = None  # AugmentConfig
    _rng: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        self._rng = np.random.default_rng(self.seed)

    def sample(self) -> SyntheticSample:
        from .augment import augment

        mode = self.modes[int(self._rng.integers(len(self.modes)))]
        s = generate_synthetic(self._rng, SyntheticConfig(self.height, self.width, self.max_disp, mode))
        if self.augment is not None:
            s = augment(s, self.augment, self._rng)
        return s

    def __iter__(self) -> Iterator[Batch]:
        return self

    def __next__(self) -> Batch:
        return collate([self.sample() for _ in range(self.batch)])
