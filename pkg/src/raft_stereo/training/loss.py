from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..autograd import ContractError, ShapeError, Tensor
from ..autograd import functional as F


@dataclass(frozen=True)
class LossConfig:
    gamma: float = 0.9
    iters: int = 16  # number of predictions supervised during training

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ContractError(f"gamma must lie in (0, 1], got {self.gamma}")
        if self.iters < 1:
            raise ContractError("need at least one training iteration")


def sequence_weights(n: int, gamma: float = 0.9) -> np.ndarray:
    """gamma^(n-i) for i = 1..n; the last prediction has weight 1."""
    return gamma ** np.arange(n - 1, -1, -1, dtype=np.float64)


def sequence_loss(preds: Sequence[Tensor], gt, mask=None, gamma: float = 0.9) -> Tensor:
    """Exponentially weighted sum of masked mean L1 errors over all predictions.

    ``preds`` are full-resolution fields ``[N, 1, H, W]`` (or ``[N, H, W]``),
    ``gt`` and ``mask`` are ``[N, H, W]``.
    """
    if len(preds) == 0:
        raise ContractError("sequence_loss needs at least one prediction")
    gt = np.asarray(gt.data if isinstance(gt, Tensor) else gt)
    valid = np.isfinite(gt) if mask is None else (np.asarray(mask, dtype=bool) & np.isfinite(gt))
    count = int(valid.sum())
    if count == 0:
        raise ContractError("sequence_loss: mask selects no pixels")
    dtype = preds[0].dtype
    target = Tensor(np.where(valid, gt, 0.0).astype(dtype))
    weight_map = Tensor((valid / count).astype(dtype))
    total = None
    for w, p in zip(sequence_weights(len(preds), gamma), preds):
        if p.ndim == 4:
            p = F.reshape(p, (p.shape[0],) + p.shape[2:])
        if p.shape != gt.shape:
            raise ShapeError(f"prediction {p.shape} does not match ground truth {gt.shape}")
        term = F.sum(F.abs(p - target) * weight_map) * float(w)
        total = term if total is None else total + term
    return total
