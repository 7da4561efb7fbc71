"""Feature and context encoders plus input padding.

Both encoders share one trunk layout: a stride-2 7x7 stem followed by three
stages of pre-activation residual blocks (widths ``cfg.widths``) whose
strides reach 1/4 or 1/8 resolution.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from .autograd import ShapeError, Tensor
from .autograd import functional as F
from .autograd.nn import Conv2d, Module, Sequential, make_norm
from .config import ModelConfig


class ResidualBlock(Module):
    """norm -> relu -> conv3x3 -> norm -> relu -> conv3x3, plus a (projected) skip."""

    def __init__(self, cin: int, cout: int, norm: str, rng, stride: int = 1):
        super().__init__()
        self.norm1 = make_norm(norm, cin)
        self.conv1 = Conv2d(cin, cout, 3, rng, stride=stride)
        self.norm2 = make_norm(norm, cout)
        self.conv2 = Conv2d(cout, cout, 3, rng)
        self.skip = Conv2d(cin, cout, 1, rng, stride=stride, gain=1.0) if (stride != 1 or cin != cout) else None

    def forward(self, x: Tensor) -> Tensor:
        y = self.conv1(F.relu(self.norm1(x)))
        y = self.conv2(F.relu(self.norm2(y)))
        return y + (self.skip(x) if self.skip is not None else x)


class Trunk(Module):
    """Stem + three residual stages; output at 1/``downsample`` with ``widths[2]`` channels."""

    def __init__(self, cfg: ModelConfig, norm: str, rng):
        super().__init__()
        w0, w1, w2 = cfg.widths
        self.stem = Conv2d(3, w0, 7, rng, stride=2)
        strides = (1, 2, 2 if cfg.downsample == 8 else 1)
        stages, cin = [], w0
        for width, stride in zip(cfg.widths, strides):
            blocks = [ResidualBlock(cin, width, norm, rng, stride)]
            blocks += [ResidualBlock(width, width, norm, rng) for _ in range(cfg.blocks_per_stage - 1)]
            stages.append(Sequential(blocks))
            cin = width
        self.stages = stages
        self.out_norm = make_norm(norm, w2)

    def forward(self, x: Tensor) -> Tensor:
        x = self.stem(x)
        for stage in self.stages:
            x = stage(x)
        return F.relu(self.out_norm(x))


def normalize_image(img: Tensor) -> Tensor:
    return img * 2.0 - 1.0


class FeatureEncoder(Module):
    """Images ``[N, 3, H, W]`` in [0, 1] -> correlation features ``[N, feature_dim, H/s, W/s]``."""

    def __init__(self, cfg: ModelConfig, rng):
        super().__init__()
        self.cfg = cfg
        self.trunk = Trunk(cfg, cfg.feature_norm, rng)
        self.out = Conv2d(cfg.widths[2], cfg.feature_dim, 1, rng, gain=1.0)

    def forward(self, img: Tensor) -> Tensor:
        check_divisible(img, self.cfg.downsample)
        return self.out(self.trunk(normalize_image(img)))


@dataclass
class ContextBundle:
    """Per GRU level (finest first): injected context features and initial hidden state."""

    context: List[Tensor]
    hidden: List[Tensor]

    def __len__(self) -> int:
        return len(self.hidden)


class ContextHeads(Module):
    """Turns trunk output into per-level (context, hidden) pairs.

    Level 0 sits at trunk resolution; each coarser level adds a stride-2
    residual block. Each head emits ``2*hidden_dim`` channels split in half.
    """

    def __init__(self, cfg: ModelConfig, rng):
        super().__init__()
        w, hid = cfg.widths[2], cfg.hidden_dim
        norm = cfg.context_norm
        self.hid = hid
        self.down = [ResidualBlock(w, w, norm, rng, stride=2) for _ in range(cfg.levels - 1)]
        self.blocks = [ResidualBlock(w, w, norm, rng) for _ in range(cfg.levels)]
        self.heads = [Conv2d(w, 2 * hid, 3, rng, gain=1.0) for _ in range(cfg.levels)]
        self.norms = [make_norm(norm, w) for _ in range(cfg.levels)]

    def forward(self, x: Tensor) -> ContextBundle:
        ctx, hidden = [], []
        for level in range(len(self.heads)):
            if level:
                x = self.down[level - 1](x)
            y = self.heads[level](F.relu(self.norms[level](self.blocks[level](x))))
            c, h = F.split(y, [self.hid, self.hid], axis=1)
            ctx.append(F.relu(c))
            hidden.append(F.tanh(h))
        return ContextBundle(ctx, hidden)


class ContextEncoder(Module):
    """Left image -> :class:`ContextBundle` (batch norm by default)."""

    def __init__(self, cfg: ModelConfig, rng):
        super().__init__()
        self.cfg = cfg
        self.trunk = Trunk(cfg, cfg.context_norm, rng)
        self.heads = ContextHeads(cfg, rng)

    def forward(self, img: Tensor) -> ContextBundle:
        check_divisible(img, self.cfg.divisor)
        return self.heads(self.trunk(normalize_image(img)))


class SharedEncoder(Module):
    """One trunk for both images; features and context branch off its output.

    The trunk produces the matching features, so it uses the feature norm
    (per-image statistics); only the context heads use the context norm.
    """

    def __init__(self, cfg: ModelConfig, rng):
        super().__init__()
        self.cfg = cfg
        self.trunk = Trunk(cfg, cfg.feature_norm, rng)
        w = cfg.widths[2]
        self.feature_block = ResidualBlock(w, w, cfg.feature_norm, rng)
        self.feature_norm = make_norm(cfg.feature_norm, w)
        self.feature_out = Conv2d(w, cfg.feature_dim, 1, rng, gain=1.0)
        self.heads = ContextHeads(cfg, rng)

    def forward(self, left: Tensor, right: Tensor):
        check_divisible(left, self.cfg.divisor)
        N = left.shape[0]
        trunk = self.trunk(normalize_image(F.concat([left, right], axis=0)))
        feats = self.feature_out(F.relu(self.feature_norm(self.feature_block(trunk))))
        return feats[:N], feats[N:], self.heads(trunk[:N])


class Encoders(Module):
    """Feature + context extraction for a stereo pair, separate or shared trunk."""

    def __init__(self, cfg: ModelConfig, rng):
        super().__init__()
        self.cfg = cfg
        if cfg.shared_backbone:
            self.shared = SharedEncoder(cfg, rng)
        else:
            self.fnet = FeatureEncoder(cfg, rng)
            self.cnet = ContextEncoder(cfg, rng)

    def forward(self, left: Tensor, right: Tensor) -> Tuple[Tensor, Tensor, ContextBundle]:
        if self.cfg.shared_backbone:
            return self.shared(left, right)
        N = left.shape[0]
        feats = self.fnet(F.concat([left, right], axis=0))
        return feats[:N], feats[N:], self.cnet(left)


def check_divisible(img: Tensor, divisor: int) -> None:
    H, W = img.shape[-2:]
    if H % divisor or W % divisor:
        raise ShapeError(f"input {H}x{W} is not divisible by {divisor}; pad it first")


# ------------------------------------------------------------------ padding
@dataclass(frozen=True)
class CropRecord:
    top: int = 0
    bottom: int = 0
    left: int = 0
    right: int = 0

    @property
    def empty(self) -> bool:
        return not (self.top or self.bottom or self.left or self.right)

    def crop(self, arr):
        """Undo the padding on the last two axes of an array or tensor."""
        H, W = arr.shape[-2:]
        return arr[..., self.top : H - self.bottom, self.left : W - self.right]


def pad_input(left: np.ndarray, right: np.ndarray, multiple: int = 32):
    """Edge-replicate both images (``[..., H, W]``) up to multiples of ``multiple``."""
    if left.shape != right.shape:
        raise ShapeError(f"stereo pair differs in shape: {left.shape} vs {right.shape}")
    H, W = left.shape[-2:]
    ph = (-H) % multiple
    pw = (-W) % multiple
    rec = CropRecord(ph // 2, ph - ph // 2, pw // 2, pw - pw // 2)
    if rec.empty:
        return left, right, rec
    widths = [(0, 0)] * (left.ndim - 2) + [(rec.top, rec.bottom), (rec.left, rec.right)]
    return np.pad(left, widths, mode="edge"), np.pad(right, widths, mode="edge"), rec
