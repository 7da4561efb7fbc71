"""Multi-level convolutional GRU update operator and convex upsampling."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .autograd import ContractError, ShapeError, Tensor
from .autograd import functional as F
from .autograd.counters import mac_scope
from .autograd.nn import Conv2d, Module
from .config import ModelConfig


class ConvGRU(Module):
    """h' = (1-z) h + z tanh(conv_q([r*h, x])) with z, r = sigmoid(conv([h, x])).

    The z and r convolutions share their input, so they are evaluated as one
    convolution with ``2*hidden`` outputs (first half z, second half r).
    """

    def __init__(self, hidden: int, cin: int, rng, kernel: int = 3):
        super().__init__()
        self.hidden, self.cin = hidden, cin
        self.conv_zr = Conv2d(hidden + cin, 2 * hidden, kernel, rng, gain=1.0)
        self.conv_q = Conv2d(hidden + cin, hidden, kernel, rng, gain=1.0)

    def forward(self, h: Tensor, *inputs: Tensor) -> Tensor:
        x = F.concat(list(inputs), axis=1) if len(inputs) > 1 else inputs[0]
        if h.shape[1] != self.hidden or x.shape[1] != self.cin:
            raise ShapeError(
                f"GRU expects hidden {self.hidden} / input {self.cin} channels, got {h.shape[1]} / {x.shape[1]}"
            )
        zr = F.sigmoid(self.conv_zr(F.concat([h, x], axis=1)))
        z, r = F.split(zr, [self.hidden, self.hidden], axis=1)
        q = F.tanh(self.conv_q(F.concat([r * h, x], axis=1)))
        return h + z * (q - h)


class MotionEncoder(Module):
    """Correlation features and the current disparity, each through two convs, fused."""

    def __init__(self, cfg: ModelConfig, rng):
        super().__init__()
        c = cfg.motion_branch_dim
        self.convc1 = Conv2d(cfg.corr_channels, c, 1, rng)
        self.convc2 = Conv2d(c, c, 3, rng)
        self.convd1 = Conv2d(1, c, 7, rng)
        self.convd2 = Conv2d(c, c, 3, rng)
        self.conv = Conv2d(2 * c, cfg.motion_channels - 1, 3, rng)

    def forward(self, disp: Tensor, corr: Tensor) -> Tensor:
        c = F.relu(self.convc2(F.relu(self.convc1(corr))))
        d = F.relu(self.convd2(F.relu(self.convd1(disp))))
        out = F.relu(self.conv(F.concat([c, d], axis=1)))
        return F.concat([out, disp], axis=1)


class Head(Module):
    def __init__(self, cin: int, mid: int, cout: int, rng, kernel2: int = 3, gain2: float = 1.0):
        super().__init__()
        self.conv1 = Conv2d(cin, mid, 3, rng)
        self.conv2 = Conv2d(mid, cout, kernel2, rng, gain=gain2)

    def forward(self, x: Tensor) -> Tensor:
        return self.conv2(F.relu(self.conv1(x)))


@dataclass
class MultiLevelState:
    """GRU hidden states and injected context, finest level first."""

    hidden: List[Tensor]
    context: List[Tensor]

    @property
    def levels(self) -> int:
        return len(self.hidden)


class MultiLevelUpdate(Module):
    """Cross-connected GRUs at 1/s, 1/2s, 1/4s.

    Level l receives its context, the 2x2-mean-pooled hidden state of level
    l-1 and the bilinearly upsampled hidden state of level l+1. Only the
    finest GRU sees correlation/disparity features and drives the heads.
    """

    def __init__(self, cfg: ModelConfig, rng):
        super().__init__()
        self.cfg = cfg
        hid, L = cfg.hidden_dim, cfg.levels
        self.motion = MotionEncoder(cfg, rng)
        grus = []
        for level in range(L):
            cin = hid  # context
            cin += cfg.motion_channels if level == 0 else hid  # motion / finer neighbour
            cin += hid if level < L - 1 else 0  # coarser neighbour
            grus.append(ConvGRU(hid, cin, rng))
        self.grus = grus
        s = cfg.downsample
        self.disp_head = Head(hid, cfg.head_dim, 1, rng, gain2=0.1)
        self.mask_head = Head(hid, cfg.head_dim, 9 * s * s, rng, kernel2=1)

    def forward(self, state: MultiLevelState, corr_fn, disp: Tensor,
                active: Optional[Sequence[bool]] = None) -> Tuple[MultiLevelState, Optional[Tensor], Optional[Tensor]]:
        L = len(self.grus)
        if state.levels != L:
            raise ShapeError(f"state has {state.levels} levels, operator has {L}")
        active = [True] * L if active is None else list(active)
        h = list(state.hidden)
        for level in reversed(range(L)):
            if not active[level]:
                continue
            with mac_scope(f"gru{level}"):
                inputs = [state.context[level]]
                if level == 0:
                    with mac_scope("lookup"):
                        corr = corr_fn(disp)
                    with mac_scope("motion"):
                        inputs.append(self.motion(disp, corr))
                else:
                    inputs.append(F.avgpool2x(h[level - 1]))
                if level < L - 1:
                    inputs.append(F.upsample2x(h[level + 1]))
                h[level] = self.grus[level](h[level], *inputs)
        new_state = MultiLevelState(h, state.context)
        if not active[0]:
            return new_state, None, None
        with mac_scope("heads"):
            delta = self.disp_head(h[0])
            mask = self.mask_head(h[0]) * 0.25
        return new_state, delta, mask


def convex_upsample(disp: Tensor, mask: Tensor, factor: int) -> Tensor:
    """Full-resolution disparity as a softmax-weighted mix of the 3x3 coarse neighbours.

    ``disp`` is ``[N, 1, H, W]``, ``mask`` ``[N, 9*f*f, H, W]``; values are
    multiplied by ``factor`` so they are in full-resolution pixels. Borders
    replicate the edge disparity.
    """
    N, _, H, W = disp.shape
    f = factor
    if mask.shape != (N, 9 * f * f, H, W):
        raise ShapeError(f"mask {mask.shape} does not fit disparity {disp.shape} at factor {f}")
    weights = F.softmax(F.reshape(mask, (N, 9, f, f, H, W)), axis=1)
    neigh = F.reshape(F.unfold3x3(disp * float(f)), (N, 9, 1, 1, H, W))
    up = F.sum(weights * neigh, axis=1)  # N f f H W
    up = F.transpose(up, (0, 3, 1, 4, 2))  # N H f W f
    return F.reshape(up, (N, 1, H * f, W * f))


@dataclass(frozen=True)
class IterationSchedule:
    """Per-level update counts, finest first, e.g. ``(10, 20, 30)`` for slow-fast.

    Updates are interleaved proportionally: the finest level defines the
    outer iterations and, within each, coarser levels run their extra
    updates first so every outer iteration ends with a joint update that
    includes the finest level.
    """

    counts: Tuple[int, ...]

    def __post_init__(self):
        counts = tuple(int(c) for c in self.counts)
        object.__setattr__(self, "counts", counts)
        if not counts or counts[0] < 1:
            raise ContractError(f"schedule needs at least one finest-level update, got {counts}")
        if any(c < counts[0] for c in counts[1:]):
            raise ContractError(f"finest level must not update more often than coarser ones: {counts}")

    @classmethod
    def regular(cls, iters: int, levels: int) -> "IterationSchedule":
        return cls((iters,) * levels)

    @classmethod
    def slow_fast(cls, levels: int = 3, finest: int = 10) -> "IterationSchedule":
        return cls(tuple(finest * (i + 1) for i in range(levels)))

    @property
    def levels(self) -> int:
        return len(self.counts)

    @property
    def finest_updates(self) -> int:
        return self.counts[0]

    def substeps(self) -> Iterator[Tuple[bool, ...]]:
        n0 = self.counts[0]
        for t in range(1, n0 + 1):
            k = [c * t // n0 - c * (t - 1) // n0 for c in self.counts]
            K = max(k)
            for j in range(K):
                yield tuple(j >= K - kl for kl in k)

    def level_totals(self) -> Tuple[int, ...]:
        totals = np.zeros(self.levels, dtype=int)
        for act in self.substeps():
            totals += np.array(act, dtype=int)
        return tuple(int(x) for x in totals)
