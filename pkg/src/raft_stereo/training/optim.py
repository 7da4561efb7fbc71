"""AdamW, one-cycle learning-rate schedule and gradient-norm clipping."""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass
from typing import Iterable, Tuple

import numpy as np

from ..autograd import ContractError, ShapeError, Tensor


@dataclass(frozen=True)
class LRConfig:
    peak: float = 2e-4
    floor: float = 1e-4
    pct_start: float = 0.05  # fraction of steps spent warming up
    div_factor: float = 2.0  # start value is peak / div_factor

    def __post_init__(self):
        if not 0 < self.floor <= self.peak:
            raise ContractError(f"need 0 < floor <= peak, got floor={self.floor}, peak={self.peak}")
        if not 0.0 <= self.pct_start < 1.0:
            raise ContractError("pct_start must lie in [0, 1)")
        if self.div_factor < 1.0:
            raise ContractError("div_factor must be >= 1")


def one_cycle_lr(step: int, total_steps: int, cfg: LRConfig = LRConfig()) -> float:
    """Linear warm-up from peak/div_factor to peak, then linear anneal to the floor.

    The result is clamped from below by ``cfg.floor``.
    """
    if total_steps < 1 or not 0 <= step < total_steps:
        raise ContractError(f"step {step} outside [0, {total_steps})")
    start = cfg.peak / cfg.div_factor
    warm = int(round(cfg.pct_start * total_steps))
    if step < warm:
        lr = start + (cfg.peak - start) * step / warm
    else:
        span = max(total_steps - 1 - warm, 1)
        lr = cfg.peak + (cfg.floor - cfg.peak) * (step - warm) / span
    return max(lr, cfg.floor)


def clip_grad_norm(params: Iterable[Tensor], max_norm: float) -> float:
    """Rescale gradients in place so their global L2 norm is at most ``max_norm``; returns the pre-clip norm."""
    grads = [p.grad for p in params if p.grad is not None]
    norm = float(np.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads)))
    if np.isfinite(norm) and norm > max_norm:
        scale = max_norm / (norm + 1e-6)
        for g in grads:
            g *= scale
    return norm


class AdamW:
    """Adam with decoupled weight decay; ``step(lr)`` takes the scheduled rate."""

    def __init__(self, named_params, betas: Tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 1e-5):
        self.params = OrderedDict(named_params)
        self.betas, self.eps, self.weight_decay = betas, eps, weight_decay
        self.m = OrderedDict((k, np.zeros_like(p.data)) for k, p in self.params.items())
        self.v = OrderedDict((k, np.zeros_like(p.data)) for k, p in self.params.items())
        self.t = 0

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self, lr: float) -> None:
        self.t += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for k, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad.astype(p.data.dtype, copy=False)
            m, v = self.m[k], self.v[k]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data *= 1.0 - lr * self.weight_decay
            p.data -= (lr / c1) * m / (np.sqrt(v / c2) + self.eps)

    def state_dict(self) -> dict:
        return {"step": self.t, "betas": list(self.betas), "eps": self.eps, "weight_decay": self.weight_decay,
                "m": OrderedDict(self.m), "v": OrderedDict(self.v)}

    def load_state_dict(self, state: dict) -> None:
        for slot in ("m", "v"):
            src = state[slot]
            if set(src) != set(self.params):
                raise ContractError(f"optimizer {slot} state does not cover the same parameters")
            for k, arr in src.items():
                if arr.shape != self.params[k].shape:
                    raise ShapeError(f"optimizer {slot} for {k!r}: shape {arr.shape}, parameter {self.params[k].shape}")
                getattr(self, slot)[k] = np.array(arr, dtype=self.params[k].data.dtype)
        self.t = int(state["step"])
        self.betas = tuple(state.get("betas", self.betas))
        self.eps = float(state.get("eps", self.eps))
        self.weight_decay = float(state.get("weight_decay", self.weight_decay))
