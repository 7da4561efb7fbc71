"""Disparity error metrics: end-point error, bad-tau percentages and D1."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence

import numpy as np

from .autograd import ContractError, ShapeError

DEFAULT_THRESHOLDS = (0.5, 1.0, 2.0, 3.0, 4.0)


@dataclass
class MetricsReport:
    epe: float
    bad: Dict[float, float] = field(default_factory=dict)  # tau -> percent of pixels with error > tau
    d1: float = 0.0  # percent with error > 3 px
    count: int = 0

    def as_dict(self) -> dict:
        out = {"epe": self.epe, "d1": self.d1, "count": self.count}
        out.update({f"bad_{tau:g}": v for tau, v in self.bad.items()})
        return out


def compute_metrics(pred, gt, mask=None, thresholds: Sequence[float] = DEFAULT_THRESHOLDS) -> MetricsReport:
    """Errors over ``mask`` (default: pixels with finite ground truth).

    A pixel is bad at tau when its absolute error is strictly greater than tau.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
    valid = np.isfinite(gt)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != gt.shape:
            raise ShapeError(f"mask {mask.shape} does not match ground truth {gt.shape}")
        valid &= mask
    n = int(valid.sum())
    if n == 0:
        raise ContractError("metrics need at least one valid pixel")
    err = np.abs(pred[valid] - gt[valid])
    bad = {float(t): 100.0 * float(np.count_nonzero(err > t)) / n for t in thresholds}
    d1 = 100.0 * float(np.count_nonzero(err > 3.0)) / n
    return MetricsReport(float(err.mean()), bad, d1, n)


def aggregate(reports: Sequence[MetricsReport], weights: Optional[str] = "pixels") -> MetricsReport:
    """Combine per-image reports; ``weights='pixels'`` pools pixels, ``None`` averages images."""
    if not reports:
        raise ContractError("nothing to aggregate")
    w = np.array([r.count if weights == "pixels" else 1 for r in reports], dtype=np.float64)
    w /= w.sum()
    taus = list(reports[0].bad)
    return MetricsReport(
        float(sum(wi * r.epe for wi, r in zip(w, reports))),
        {t: float(sum(wi * r.bad[t] for wi, r in zip(w, reports))) for t in taus},
        float(sum(wi * r.d1 for wi, r in zip(w, reports))),
        int(sum(r.count for r in reports)),
    )
