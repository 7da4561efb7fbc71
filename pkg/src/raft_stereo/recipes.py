"""Run descriptions: a plain dict (JSON file for the CLI) -> model, data stream, train config, validation set.

Example::

    {
      "model": {"toy": true, "levels": 3},
      "train": {"steps": 3000, "batch": 2, "iters": 12, "lr": {"peak": 1e-3, "floor": 1e-4}},
      "data": {"modes": ["a", "b"], "height": 80, "width": 160, "max_disp": 16, "augment": {}},
      "val": {"n": 50, "seed": 12345},
      "seed": 0
    }
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import List

from .config import ModelConfig
from .model import RAFTStereo
from .training.augment import AugmentConfig
from .training.loop import TrainConfig
from .training.synthetic import SyntheticSample, SyntheticStream, make_dataset


@dataclass
class Run:
    model: RAFTStereo
    stream: SyntheticStream
    train: TrainConfig
    val_set: List[SyntheticSample]
    spec: dict


def model_config(spec: dict) -> ModelConfig:
    spec = dict(spec)
    if spec.pop("toy", False):
        return ModelConfig.toy(**spec)
    return ModelConfig.from_dict(spec)


def _augment(spec) -> AugmentConfig:
    if spec is None or spec is False:
        return None
    spec = {} if spec is True else dict(spec)
    for key in ("saturation", "stretch", "crop"):
        if spec.get(key) is not None:
            spec[key] = tuple(spec[key])
    return AugmentConfig(**spec)


def build_run(spec: dict) -> Run:
    seed = int(spec.get("seed", 0))
    cfg = model_config(spec.get("model", {"toy": True}))
    train_cfg = TrainConfig.from_dict({"seed": seed, **spec.get("train", {})})
    data = dict(spec.get("data", {}))
    stream = SyntheticStream(
        batch=train_cfg.batch,
        modes=tuple(data.get("modes", ("a", "b"))),
        height=int(data.get("height", 80)),
        width=int(data.get("width", 160)),
        max_disp=float(data.get("max_disp", 16.0)),
        seed=int(data.get("seed", seed + 1)),
        augment=_augment(data.get("augment", True)),
    )
    val = spec.get("val", {})
    val_set = make_dataset(int(val.get("n", 50)), int(val.get("seed", 12345)), tuple(val.get("modes", stream.modes)),
                           int(val.get("height", 64)), int(val.get("width", 128)), float(val.get("max_disp", 16.0)))
    return Run(RAFTStereo(cfg, seed=seed), stream, train_cfg, val_set, spec)


def spec_digest(spec: dict) -> str:
    """Stable short hash of a run description (used to key cached training results)."""
    return hashlib.sha256(json.dumps(spec, sort_keys=True).encode()).hexdigest()[:16]


def toy_spec(steps: int = 2500, levels: int = 3, shared_backbone: bool = False, seed: int = 0) -> dict:
    """The desk-scale learning run: toy widths, 64x128 crops, batch 2, modes a+b, max disparity 16."""
    return {
        "model": {"toy": True, "levels": levels, "shared_backbone": shared_backbone},
        "train": {"steps": steps, "batch": 2, "iters": 32, "gamma": 0.9,
                  "lr": {"peak": 1e-3, "floor": 1e-4, "pct_start": 0.05, "div_factor": 10.0},
                  "weight_decay": 1e-5, "clip": 1.0, "val_every": 0},
        "data": {"modes": ["a", "b"], "height": 80, "width": 160, "max_disp": 16.0,
                 "augment": {"saturation": [0.0, 1.4], "stretch": None, "vertical": 0.0, "crop": [64, 128]}},
        "val": {"n": 50, "seed": 12345, "modes": ["a", "b"], "height": 64, "width": 128, "max_disp": 16.0},
        "seed": seed,
    }


def train_cached(spec: dict, cache_dir: str, name: str = "run"):
    """Train ``spec`` once and reuse the result while the description is unchanged.

    Results live in ``cache_dir/<name>-<digest>/`` (checkpoint, JSONL log,
    summary.json with wall time). Returns ``(model, summary, run)``.
    """
    import os
    import time

    from .io.checkpoint import load_model
    from .training.loop import train

    digest = spec_digest(spec)
    out = os.path.join(cache_dir, f"{name}-{digest}")
    ckpt = os.path.join(out, "model.ckpt")
    summary_path = os.path.join(out, "summary.json")
    run = build_run(spec)
    if os.path.exists(ckpt) and os.path.exists(summary_path):
        with open(summary_path, "r", encoding="utf-8") as fh:
            summary = json.load(fh)
        model, _ = load_model(ckpt, run.model.cfg)
        return model, summary, run
    os.makedirs(out, exist_ok=True)
    run.train.ckpt_path = ckpt
    run.train.log_path = os.path.join(out, "log.jsonl")
    if os.path.exists(run.train.log_path):
        os.unlink(run.train.log_path)
    t = time.time()
    result = train(run.model, run.stream, run.train)
    summary = {"spec": spec, "digest": digest, "seconds": time.time() - t, "steps": len(result.history),
               "final_loss": result.history[-1]["loss"]}
    with open(summary_path, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    return run.model, summary, run
