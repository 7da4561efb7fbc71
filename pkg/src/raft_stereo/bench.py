"""Per-stage multiply-accumulate and wall-clock audit of one forward pass."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .autograd import Tensor, count_macs, no_grad
from .config import ModelConfig
from .model import RAFTStereo
from .update import IterationSchedule


@dataclass
class BenchReport:
    config: ModelConfig
    schedule: IterationSchedule
    height: int
    width: int
    parameters: int
    macs: Dict[str, int] = field(default_factory=dict)
    seconds: Dict[str, float] = field(default_factory=dict)

    @property
    def total_macs(self) -> int:
        return sum(self.macs.values())

    def gru_macs(self) -> int:
        return sum(v for k, v in self.macs.items() if k.startswith("gru") and "/" not in k)

    def table(self) -> str:
        lines = [
            f"levels={self.config.levels} downsample={self.config.downsample} "
            f"shared_backbone={self.config.shared_backbone} schedule={self.schedule.counts} "
            f"input={self.height}x{self.width}",
            f"parameters {self.parameters:,}",
            f"{'stage':<16}{'GMAC':>12}",
        ]
        for k in sorted(self.macs):
            lines.append(f"{k:<16}{self.macs[k] / 1e9:>12.4f}")
        lines.append(f"{'total':<16}{self.total_macs / 1e9:>12.4f}")
        lines.append(f"{'phase':<16}{'seconds':>12}")
        for k, v in self.seconds.items():
            lines.append(f"{k:<16}{v:>12.3f}")
        return "\n".join(lines)

    def as_dict(self) -> dict:
        return {"config": self.config.to_dict(), "schedule": list(self.schedule.counts), "height": self.height,
                "width": self.width, "parameters": self.parameters, "macs": dict(self.macs),
                "gru_macs": self.gru_macs(), "total_macs": self.total_macs, "seconds": dict(self.seconds)}


def run_bench(cfg: ModelConfig, height: int = 64, width: int = 128, iters: int = 32,
              schedule: Optional[IterationSchedule] = None, seed: int = 0) -> BenchReport:
    """Time encoders, correlation and the refinement loop separately and count MACs per scope."""
    schedule = schedule or IterationSchedule.regular(iters, cfg.levels)
    model = RAFTStereo(cfg, seed=seed).eval()
    rng = np.random.default_rng(seed)
    left = Tensor(rng.random((1, 3, height, width)).astype(np.float32))
    right = Tensor(rng.random((1, 3, height, width)).astype(np.float32))
    seconds = {}
    with no_grad(), count_macs() as counter:
        t = time.perf_counter()
        state, corr, disp = model.initial_state(left, right)
        seconds["encode+volume"] = time.perf_counter() - t
        t = time.perf_counter()
        model.rollout(state, corr, disp, schedule, collect=False)
        seconds["refinement"] = time.perf_counter() - t
    return BenchReport(cfg, schedule, height, width, model.num_parameters(), dict(counter.by_scope), seconds)
