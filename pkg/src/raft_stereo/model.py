"""The full stereo network: encoders, correlation, recurrent refinement, upsampling."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, List, Optional

import numpy as np

from .autograd import ContractError, Tensor, no_grad
from .autograd import functional as F
from .autograd.counters import mac_scope
from .autograd.nn import Module
from .config import ModelConfig
from .correlation import LookupConfig, make_correlation
from .encoders import CropRecord, Encoders, pad_input
from .update import IterationSchedule, MultiLevelState, MultiLevelUpdate, convex_upsample

DispHook = Callable[[int, Tensor], Tensor]


@dataclass
class RolloutResult:
    """Final full-resolution disparity plus (optionally) every intermediate one."""

    disparity: Tensor
    predictions: List[Tensor]
    coarse: Tensor


class RAFTStereo(Module):
    def __init__(self, cfg: ModelConfig = ModelConfig(), seed: int = 0):
        super().__init__()
        self.cfg = cfg
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.encoders = Encoders(cfg, rng)
        self.update = MultiLevelUpdate(cfg, rng)

    @property
    def lookup_cfg(self) -> LookupConfig:
        return LookupConfig(self.cfg.corr_radius, self.cfg.corr_levels, self.cfg.corr_normalize)

    def initial_state(self, left: Tensor, right: Tensor):
        with mac_scope("encoders"):
            f, g, bundle = self.encoders(left, right)
        with mac_scope("volume"):
            corr = make_correlation(f, g, self.lookup_cfg, self.cfg.on_the_fly_corr)
        state = MultiLevelState(list(bundle.hidden), list(bundle.context))
        N, _, H, W = f.shape
        disp = Tensor(np.zeros((N, 1, H, W), dtype=f.dtype))
        return state, corr, disp

    def rollout(self, state: MultiLevelState, corr, disp: Tensor, schedule: IterationSchedule,
                collect: bool = True, disp_hook: Optional[DispHook] = None) -> RolloutResult:
        """Run the recurrent refinement for ``schedule``.

        With ``collect`` every finest-level update is upsampled and kept (for
        the sequence loss); otherwise only the last one is, so memory does not
        grow with the number of iterations.
        """
        if schedule.levels != self.cfg.levels:
            raise ContractError(f"schedule has {schedule.levels} levels, model has {self.cfg.levels}")
        s = self.cfg.downsample
        preds: List[Tensor] = []
        mask = None
        it = 0
        for active in schedule.substeps():
            state, delta, step_mask = self.update(state, corr, disp, active)
            if delta is None:
                continue
            disp = disp + delta
            it += 1
            if disp_hook is not None:
                disp = disp_hook(it, disp)
            mask = step_mask
            if collect:
                with mac_scope("upsample"):
                    preds.append(convex_upsample(disp, mask, s))
        if collect:
            final = preds[-1]
        else:
            with mac_scope("upsample"):
                final = convex_upsample(disp, mask, s)
        return RolloutResult(final, preds, disp)

    def forward(self, left: Tensor, right: Tensor, iters: int = 12, schedule: Optional[IterationSchedule] = None,
                collect: bool = True, disp_hook: Optional[DispHook] = None) -> RolloutResult:
        """``left``/``right`` are ``[N, 3, H, W]`` in [0, 1] with extents divisible by ``cfg.divisor``."""
        if schedule is None:
            if iters < 1:
                raise ContractError(f"need at least one update iteration, got {iters}")
            schedule = IterationSchedule.regular(iters, self.cfg.levels)
        state, corr, disp = self.initial_state(left, right)
        return self.rollout(state, corr, disp, schedule, collect, disp_hook)


def _to_batch(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float32)
    if img.ndim == 3:
        img = img[None]
    if img.ndim != 4 or img.shape[1] != 3:
        raise ContractError(f"images must be [3, H, W] or [N, 3, H, W], got {img.shape}")
    return img


def run_inference(model: RAFTStereo, left: np.ndarray, right: np.ndarray, iters: int = 32,
                  schedule: Optional[IterationSchedule] = None, collect: bool = False,
                  disp_hook: Optional[DispHook] = None):
    """Pad, run the network without recording gradients and crop back.

    Returns ``(disparity [N, H, W], predictions)`` where ``predictions`` is
    the list of intermediate full-resolution fields when ``collect`` is set.
    """
    if schedule is None and iters < 1:
        raise ContractError(f"need at least one update iteration, got {iters}")
    left, right = _to_batch(left), _to_batch(right)
    pl, pr, rec = pad_input(left, right, max(32, model.cfg.divisor))
    was_training = model.training
    model.eval()
    try:
        with no_grad():
            res = model(Tensor(pl), Tensor(pr), iters=iters, schedule=schedule, collect=collect, disp_hook=disp_hook)
    finally:
        model.train(was_training)
    disp = rec.crop(res.disparity.data)[:, 0]
    preds = [rec.crop(p.data)[:, 0] for p in res.predictions]
    return disp, preds


def slow_fast_rollout(model: RAFTStereo, state: MultiLevelState, corr, disp: Tensor,
                      schedule: IterationSchedule = IterationSchedule((10, 20, 30))) -> RolloutResult:
    """Rollout where coarse GRUs update more often than the finest one (same weights)."""
    if model.cfg.levels != 3:
        raise ContractError("slow-fast scheduling needs a 3-level model")
    return model.rollout(state, corr, disp, schedule, collect=False)


__all__ = ["RAFTStereo", "RolloutResult", "run_inference", "slow_fast_rollout", "CropRecord"]
