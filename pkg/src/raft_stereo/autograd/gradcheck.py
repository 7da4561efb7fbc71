"""Central finite-difference checks for autograd gradients (double precision)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .tensor import Tensor


@dataclass
class GradCheckResult:
    rel_error: float
    max_abs_error: float
    checked: int

    def ok(self, tol: float = 1e-3) -> bool:
        return self.rel_error < tol


def numerical_grad(fn: Callable[[], Tensor], t: Tensor, eps: float = 1e-5,
                   indices: Optional[np.ndarray] = None) -> tuple:
    """Central differences of scalar ``fn()`` w.r.t. entries of ``t.data``.

    Returns ``(flat_indices, grads)``.
    """
    flat = t.data.reshape(-1)
    if indices is None:
        indices = np.arange(flat.size)
    out = np.empty(len(indices), dtype=np.float64)
    for n, i in enumerate(indices):
        orig = flat[i]
        flat[i] = orig + eps
        fp = float(fn().data)
        flat[i] = orig - eps
        fm = float(fn().data)
        flat[i] = orig
        out[n] = (fp - fm) / (2 * eps)
    return indices, out


def check_gradients(fn: Callable[[], Tensor], tensors: Sequence[Tensor], eps: float = 1e-5,
                    max_per_tensor: Optional[int] = None, rng: Optional[np.random.Generator] = None) -> GradCheckResult:
    """Compare autograd against central differences over ``tensors``.

    The error is norm-wise: ``||g_auto - g_fd|| / max(||g_auto||, ||g_fd||)``
    over all checked entries, which stays meaningful when individual
    entries are near zero.
    """
    for t in tensors:
        if t.dtype != np.float64:
            raise TypeError(f"gradient checks need float64 tensors, got {t.dtype}")
        t.data = np.ascontiguousarray(t.data)
        t.grad = None
    loss = fn()
    loss.backward()
    auto, num = [], []
    rng = rng or np.random.default_rng(0)
    for t in tensors:
        size = t.data.size
        idx = None
        if max_per_tensor is not None and size > max_per_tensor:
            idx = np.sort(rng.choice(size, max_per_tensor, replace=False))
        idx, g_num = numerical_grad(fn, t, eps, idx)
        g_auto = np.zeros(len(idx)) if t.grad is None else t.grad.reshape(-1)[idx]
        auto.append(np.asarray(g_auto, dtype=np.float64))
        num.append(g_num)
    a, n = np.concatenate(auto), np.concatenate(num)
    denom = max(np.linalg.norm(a), np.linalg.norm(n), 1e-300)
    return GradCheckResult(float(np.linalg.norm(a - n) / denom), float(np.max(np.abs(a - n))), len(a))
