"""Fast built-in oracle and gradient checks, usable without the test suite."""

from __future__ import annotations

import os
import tempfile
from typing import Callable, List, Tuple

import numpy as np

from .autograd import Tensor
from .correlation import LookupConfig, build_pyramid, build_volume, lookup, lookup_on_the_fly
from .metrics import compute_metrics
from .update import convex_upsample


def _volume_oracle(rng) -> bool:
    f, g = rng.standard_normal((2, 8, 4, 6))
    v = build_volume(Tensor(f), Tensor(g), normalize=False).data
    ref = np.einsum("dij,dik->ijk", f, g)
    return bool(np.max(np.abs(v - ref)) < 1e-5)


def _pyramid(rng) -> bool:
    pyr = build_pyramid(Tensor(rng.standard_normal((1, 2, 64, 64)), dtype=np.float64))
    ok = [p.shape[-1] for p in pyr] == [64, 32, 16, 8]
    for a, b in zip(pyr, pyr[1:]):
        ok &= np.array_equal(b.data, (a.data[..., 0::2] + a.data[..., 1::2]) / 2)
    return bool(ok)


def _lookup(rng) -> bool:
    f = Tensor(rng.standard_normal((1, 16, 8, 16)).astype(np.float32))
    g = Tensor(rng.standard_normal((1, 16, 8, 16)).astype(np.float32))
    d = Tensor(rng.uniform(0, 12, (1, 1, 8, 16)).astype(np.float32))
    ref = lookup(build_pyramid(build_volume(f, g)), d, 4).data
    return bool(np.max(np.abs(lookup_on_the_fly(f, g, d, LookupConfig()).data - ref)) < 1e-4)


def _gradients(rng) -> bool:
    from .gradsuite import run_gradient_suite

    return all(r.rel_error < 1e-3 for r in run_gradient_suite(rng).values())


def _convex(rng) -> bool:
    out = convex_upsample(Tensor(np.full((1, 1, 3, 3), 2.0)), Tensor(rng.standard_normal((1, 9 * 64, 3, 3))), 8)
    return bool(np.max(np.abs(out.data - 16.0)) < 1e-4)


def _metrics(rng) -> bool:
    r = compute_metrics(np.array([0.4, 1.5, 2.5, 5.0]), np.zeros(4))
    return r.bad[1.0] == 75.0 and r.bad[2.0] == 50.0 and r.bad[4.0] == 25.0 and abs(r.epe - 2.35) < 1e-12


def _pfm(rng) -> bool:
    from .io.pfm import read_pfm, write_pfm

    field = rng.standard_normal((5, 7)).astype(np.float32)
    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "x.pfm")
        write_pfm(field, path)
        return read_pfm(path)[0].tobytes() == field.tobytes()


CHECKS: List[Tuple[str, Callable]] = [
    ("correlation volume vs einsum", _volume_oracle),
    ("pyramid extents and pooling", _pyramid),
    ("on-the-fly lookup vs precomputed", _lookup),
    ("gradient suite vs finite differences", _gradients),
    ("convex upsampling of constant field", _convex),
    ("metrics hand example", _metrics),
    ("PFM round trip", _pfm),
]


def run_selfcheck(out=None, seed: int = 0) -> bool:
    rng = np.random.default_rng(seed)
    ok = True
    for name, fn in CHECKS:
        try:
            passed = bool(fn(rng))
            detail = ""
        except Exception as exc:  # report and keep going
            passed, detail = False, f" ({type(exc).__name__}: {exc})"
        ok &= passed
        if out is not None:
            print(f"{'PASS' if passed else 'FAIL'}  {name}{detail}", file=out)
    return ok
