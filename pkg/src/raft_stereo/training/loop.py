"""Training loop: rollout, sequence loss, AdamW with one-cycle LR, logging, checkpoints."""

from __future__ import annotations

import json
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field
from typing import Iterator, List, Optional, Sequence

import numpy as np

from ..autograd import Tensor, backward
from ..io.checkpoint import save_checkpoint
from ..metrics import MetricsReport, aggregate, compute_metrics
from ..model import RAFTStereo, run_inference
from .loss import sequence_loss
from .optim import AdamW, LRConfig, clip_grad_norm, one_cycle_lr
from .synthetic import Batch, SyntheticSample

log = logging.getLogger(__name__)


class NonFiniteLossError(FloatingPointError):
    """Training produced a NaN/Inf loss."""


@dataclass
class TrainConfig:
    steps: int = 1000
    batch: int = 2
    iters: int = 16
    gamma: float = 0.9
    lr: LRConfig = field(default_factory=LRConfig)
    weight_decay: float = 1e-5
    clip: float = 1.0
    val_every: int = 0  # 0 disables periodic validation
    val_iters: int = 32
    ckpt_every: int = 0
    ckpt_path: Optional[str] = None
    log_path: Optional[str] = None
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "lr" in d and isinstance(d["lr"], dict):
            d["lr"] = LRConfig(**d["lr"])
        return cls(**d)


@dataclass
class TrainResult:
    history: List[dict]
    optimizer: AdamW
    final_val: Optional[MetricsReport] = None


def validate(model: RAFTStereo, samples: Sequence[SyntheticSample], iters: int = 32, schedule=None,
             batch: int = 5) -> MetricsReport:
    """Pixel-pooled metrics over ``samples`` (masked to visible pixels)."""
    reports = per_sample_metrics(model, samples, iters, schedule, batch)
    return aggregate(reports)


def per_sample_metrics(model: RAFTStereo, samples: Sequence[SyntheticSample], iters: int = 32, schedule=None,
                       batch: int = 5) -> List[MetricsReport]:
    reports = []
    for start in range(0, len(samples), batch):
        chunk = samples[start : start + batch]
        left = np.stack([s.left for s in chunk])
        right = np.stack([s.right for s in chunk])
        disp, _ = run_inference(model, left, right, iters=iters, schedule=schedule)
        reports += [compute_metrics(d, s.disp, s.mask) for d, s in zip(disp, chunk)]
    return reports


class _JsonlLog:
    def __init__(self, path: Optional[str]):
        self.fh = open(path, "a", encoding="utf-8") if path else None

    def write(self, record: dict) -> None:
        if self.fh:
            self.fh.write(json.dumps(record, sort_keys=True) + "\n")
            self.fh.flush()

    def close(self) -> None:
        if self.fh:
            self.fh.close()


def train_step(model: RAFTStereo, opt: AdamW, batch: Batch, cfg: TrainConfig, lr: float, step: int) -> float:
    out = model(Tensor(batch.left), Tensor(batch.right), iters=cfg.iters, collect=True)
    loss = sequence_loss(out.predictions, batch.disp, batch.mask, cfg.gamma)
    value = float(loss.data)
    if not math.isfinite(value):
        raise NonFiniteLossError(f"non-finite loss {value} at step {step} (lr={lr:.3g})")
    opt.zero_grad()
    backward(loss)
    clip_grad_norm(opt.params.values(), cfg.clip)
    opt.step(lr)
    return value


def train(model: RAFTStereo, stream: Iterator[Batch], cfg: TrainConfig,
          val_set: Optional[Sequence[SyntheticSample]] = None, optimizer: Optional[AdamW] = None) -> TrainResult:
    """Run ``cfg.steps`` optimisation steps on batches drawn from ``stream``.

    Every step appends ``{step, lr, loss, val_epe}`` to the JSONL log
    (``val_epe`` is null except on validation steps). Checkpoints are
    written atomically every ``ckpt_every`` steps and at the end.
    """
    if cfg.steps < 1 or cfg.batch < 1:
        raise ValueError("steps and batch must be positive")
    model.train()
    opt = optimizer or AdamW(model.named_parameters(), weight_decay=cfg.weight_decay)
    logger = _JsonlLog(cfg.log_path)
    history: List[dict] = []
    final_val = None
    t0 = time.time()
    try:
        for step in range(cfg.steps):
            lr = one_cycle_lr(step, cfg.steps, cfg.lr)
            loss = train_step(model, opt, next(stream), cfg, lr, step)
            rec = {"step": step, "lr": lr, "loss": loss, "val_epe": None}
            last = step == cfg.steps - 1
            if val_set and cfg.val_every and ((step + 1) % cfg.val_every == 0 or last):
                final_val = validate(model, val_set, cfg.val_iters)
                model.train()
                rec["val_epe"] = final_val.epe
                log.info("step %d loss %.4f val_epe %.4f (%.0fs)", step, loss, final_val.epe, time.time() - t0)
            history.append(rec)
            logger.write(rec)
            if cfg.ckpt_path and ((cfg.ckpt_every and (step + 1) % cfg.ckpt_every == 0) or last):
                save_checkpoint(cfg.ckpt_path, model, opt, meta={"step": step + 1, "train": cfg.to_dict()})
    finally:
        logger.close()
    return TrainResult(history, opt, final_val)
