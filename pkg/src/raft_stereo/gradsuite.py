"""Finite-difference gradient checks for every differentiable operation.

Each case builds float64 inputs from an rng and returns a scalar; the
autograd gradient is compared with central differences.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, List

import numpy as np

from .autograd import Tensor, check_gradients
from .autograd import functional as F
from .autograd.gradcheck import GradCheckResult
from .correlation import LookupConfig, build_pyramid, build_volume, lookup, lookup_on_the_fly
from .update import convex_upsample


@dataclass
class GradCase:
    name: str
    fn: Callable
    build: Callable[[np.random.Generator], List[Tensor]]


def _normal(*shapes, scale=1.0):
    def build(rng):
        return [Tensor(rng.standard_normal(s) * scale, requires_grad=True, dtype=np.float64) for s in shapes]
    return build


def _positions(lo, hi, shape, extra=()):
    """Sample positions away from integer kinks, plus extra normal tensors."""
    def build(rng):
        x = rng.uniform(lo, hi, size=shape)
        x = np.floor(x) + np.clip(x - np.floor(x), 0.1, 0.9)
        return [Tensor(rng.standard_normal(s), requires_grad=True, dtype=np.float64) for s in extra] + [
            Tensor(x, requires_grad=True, dtype=np.float64)]
    return build


def _bn_train(x, w, b):
    return F.batch_norm(x, w, b, np.zeros(x.shape[1]), np.ones(x.shape[1]), training=True)


def _lookup_case(f, g, d):
    return lookup(build_pyramid(build_volume(f, g)), d, radius=2) ** 2


def _fly_case(f, g, d):
    return lookup_on_the_fly(f, g, d, LookupConfig(radius=2)) ** 2


def _lookup_build(rng):
    f, g = (Tensor(rng.standard_normal((1, 4, 3, 8)), requires_grad=True, dtype=np.float64) for _ in range(2))
    d = rng.uniform(0.1, 6.9, size=(1, 1, 3, 8))
    d = np.floor(d) + np.clip(d - np.floor(d), 0.1, 0.9)
    return [f, g, Tensor(d, requires_grad=True, dtype=np.float64)]


CASES: List[GradCase] = [
    GradCase("add", lambda a, b: (a + b) * a, _normal((3, 4), (4,))),
    GradCase("sub", lambda a, b: (a - b) ** 2, _normal((2, 3), (2, 3))),
    GradCase("mul", lambda a, b: a * b * b, _normal((2, 3, 4), (1, 3, 1))),
    GradCase("div", lambda a, b: a / (b * b + 1.0), _normal((3, 3), (3, 3))),
    GradCase("neg", lambda a: -(a * a), _normal((4,))),
    GradCase("power", lambda a: F.power(a * a + 1.0, 1.5), _normal((3, 3))),
    GradCase("exp", lambda a: F.exp(a * 0.5), _normal((4, 4))),
    GradCase("log", lambda a: F.log(a * a + 0.5), _normal((4, 4))),
    GradCase("abs", lambda a: F.abs(a) * a, _normal((5,))),
    GradCase("relu", lambda a: F.relu(a) ** 2, _normal((4, 6))),
    GradCase("tanh", lambda a: F.tanh(a), _normal((4, 6))),
    GradCase("sigmoid", lambda a: F.sigmoid(a) * a, _normal((4, 6))),
    GradCase("sum", lambda a: F.sum(a, axis=1, keepdims=True) * a, _normal((3, 4))),
    GradCase("mean", lambda a: F.mean(a * a, axis=(1, 2)), _normal((2, 3, 4))),
    GradCase("softmax", lambda a: F.softmax(a, axis=1) * a, _normal((2, 5, 3))),
    GradCase("concat", lambda a, b: F.concat([a, b], axis=1) ** 2, _normal((2, 3, 4), (2, 2, 4))),
    GradCase("stack", lambda a, b: F.stack([a, b * a], axis=0), _normal((3, 2), (3, 2))),
    GradCase("split", lambda a: (lambda p: p[0] * p[1][:, :2])(F.split(a, [2, 3], axis=1)), _normal((2, 5, 3))),
    GradCase("getitem", lambda a: a[:, 1:3, ::2] ** 2, _normal((2, 4, 6))),
    GradCase("reshape_transpose", lambda a: F.transpose(F.reshape(a, (6, 4)), (1, 0)) ** 3, _normal((2, 3, 4))),
    GradCase("matmul", lambda a, b: F.matmul(a, b) ** 2, _normal((2, 3, 4), (4, 5))),
    GradCase("conv2d", lambda x, w, b: F.conv2d(x, w, b, stride=2, padding=1) ** 2,
             _normal((2, 3, 6, 6), (4, 3, 3, 3), (4,))),
    GradCase("instance_norm", lambda x, w: F.instance_norm(x) * w, _normal((2, 3, 5, 6), (2, 3, 5, 6))),
    GradCase("batch_norm", lambda x, w, b, m: _bn_train(x, w, b) * m, _normal((4, 3, 4, 4), (3,), (3,), (4, 3, 4, 4))),
    GradCase("avgpool_lastdim", lambda a: F.avgpool_lastdim(a) ** 2, _normal((3, 4, 5))),
    GradCase("avgpool2x", lambda a: F.avgpool2x(a) ** 2, _normal((2, 3, 4, 6))),
    GradCase("upsample2x", lambda a: F.upsample2x(a) ** 2, _normal((2, 2, 3, 4))),
    GradCase("interpolate2d", lambda a: F.interpolate2d(a, 0.5) * F.interpolate2d(a, 0.5), _normal((1, 2, 4, 8))),
    GradCase("pad_replicate", lambda a: F.pad2d(a, (1, 2, 2, 1), mode="replicate") ** 2, _normal((2, 3, 4))),
    GradCase("pad_zeros", lambda a: F.pad2d(a, 1) ** 2, _normal((2, 3, 4))),
    GradCase("unfold3x3", lambda a: F.unfold3x3(a) ** 2, _normal((1, 2, 4, 5))),
    GradCase("sample_lastdim", lambda v, x: F.sample_lastdim(v, x) ** 2, _positions(-0.9, 7.9, (3, 2, 4), extra=[(3, 2, 8)])),
    GradCase("correlation_lookup", _lookup_case, _lookup_build),
    GradCase("on_the_fly_lookup", _fly_case, _lookup_build),
    GradCase("convex_upsample", lambda d, m: convex_upsample(d, m, 4) ** 2, _normal((1, 1, 3, 3), (1, 144, 3, 3))),
]


def run_gradient_suite(rng: np.random.Generator = None, eps: float = 1e-5) -> Dict[str, GradCheckResult]:
    rng = rng or np.random.default_rng(0)
    out = {}
    for case in CASES:
        ins = case.build(rng)
        out[case.name] = check_gradients(lambda: F.sum(case.fn(*ins)), ins, eps=eps)
    return out
