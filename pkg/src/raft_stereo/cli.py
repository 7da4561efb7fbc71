"""Command-line interface.

Subcommands: infer, train, eval, bench, selfcheck.
Exit codes: 0 success, 1 usage error, 2 I/O error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from typing import List, Optional

import numpy as np

from .autograd import ContractError, ShapeError

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class NumericError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _model_config(args):
    from .config import ModelConfig

    base = ModelConfig.toy if args.toy else ModelConfig
    return base(levels=args.levels, shared_backbone=args.shared_backbone, downsample=args.resolution)


def _add_arch_flags(p):
    p.add_argument("--levels", type=int, choices=(1, 2, 3), default=3)
    p.add_argument("--shared-backbone", action="store_true")
    p.add_argument("--resolution", type=int, choices=(4, 8), default=8, help="feature downsampling factor s")
    p.add_argument("--toy", action="store_true", help="small widths used for desk-scale training")


def _need_file(path: str) -> str:
    if not os.path.isfile(path):
        raise FileNotFoundError(f"no such file: {path}")
    return path


def cmd_infer(args) -> int:
    from .io import load_model, read_image, write_disparity_png, write_pfm
    from .model import RAFTStereo, run_inference
    from .update import IterationSchedule

    left = read_image(_need_file(args.left))
    right = read_image(_need_file(args.right))
    if args.checkpoint:
        model, _ = load_model(_need_file(args.checkpoint))
    else:
        print("warning: no --checkpoint given, using randomly initialised weights", file=sys.stderr)
        model = RAFTStereo(_model_config(args), seed=args.seed)
    schedule = None
    if args.slow_fast:
        schedule = IterationSchedule.slow_fast(model.cfg.levels, finest=args.iters)
    updates = []

    def count(it, d):
        updates.append(it)
        return d

    t = time.perf_counter()
    disp, _ = run_inference(model, left, right, iters=args.iters, schedule=schedule, disp_hook=count)
    elapsed = time.perf_counter() - t
    disp = disp[0]
    if not np.isfinite(disp).all():
        raise NumericError("inference produced non-finite disparities")
    write_pfm(disp, args.out)
    summary = {"out": args.out, "updates": len(updates),
               "height": int(disp.shape[0]), "width": int(disp.shape[1]), "seconds": round(elapsed, 4)}
    if args.png:
        summary["png"] = args.png
        summary["png_range"] = write_disparity_png(disp, args.png)
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def cmd_train(args) -> int:
    from .recipes import build_run
    from .training import NonFiniteLossError, train

    with open(_need_file(args.config), "r", encoding="utf-8") as fh:
        try:
            spec = json.load(fh)
        except json.JSONDecodeError as exc:
            raise UsageError(f"cannot parse {args.config}: {exc}") from None
    out_dir = args.out_dir or spec.get("out_dir") or "."
    os.makedirs(out_dir, exist_ok=True)
    spec.setdefault("train", {})
    spec["train"]["ckpt_path"] = os.path.join(out_dir, "model.ckpt")
    spec["train"]["log_path"] = os.path.join(out_dir, "log.jsonl")
    if args.steps is not None:
        spec["train"]["steps"] = args.steps
    try:
        run = build_run(spec)
    except (TypeError, KeyError) as exc:
        raise UsageError(f"invalid run description: {exc}") from None
    try:
        result = train(run.model, run.stream, run.train, run.val_set)
    except NonFiniteLossError as exc:
        raise NumericError(str(exc)) from None
    summary = {"checkpoint": run.train.ckpt_path, "log": run.train.log_path, "steps": len(result.history),
               "final_loss": result.history[-1]["loss"]}
    if result.final_val is not None:
        summary["val"] = result.final_val.as_dict()
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def cmd_eval(args) -> int:
    from .io import read_pfm
    from .metrics import aggregate, compute_metrics

    for d in (args.pred_dir, args.gt_dir):
        if not os.path.isdir(d):
            raise FileNotFoundError(f"no such directory: {d}")
    names = sorted(n for n in os.listdir(args.gt_dir) if n.lower().endswith(".pfm"))
    if not names:
        raise FileNotFoundError(f"no .pfm files in {args.gt_dir}")
    per_file, reports = {}, []
    for name in names:
        gt, _ = read_pfm(os.path.join(args.gt_dir, name))
        pred, _ = read_pfm(_need_file(os.path.join(args.pred_dir, name)))
        if pred.shape == gt.shape and not np.isfinite(pred[np.isfinite(gt)]).all():
            raise NumericError(f"non-finite prediction at valid pixels in {name}")
        rep = compute_metrics(pred, gt, thresholds=args.thresholds)
        reports.append(rep)
        per_file[name] = rep.as_dict()
    out = {"overall": aggregate(reports).as_dict(), "files": per_file}
    print(json.dumps(out, sort_keys=True, indent=2))
    return EXIT_OK


def cmd_bench(args) -> int:
    from .bench import run_bench
    from .update import IterationSchedule

    cfg = _model_config(args)
    schedule = IterationSchedule.slow_fast(cfg.levels, finest=10) if args.slow_fast else None
    if args.slow_fast and cfg.levels != 3:
        raise UsageError("--slow-fast needs --levels 3")
    if args.height % cfg.divisor or args.width % cfg.divisor:
        raise UsageError(f"--height/--width must be multiples of {cfg.divisor}")
    report = run_bench(cfg, args.height, args.width, args.iters, schedule)
    print(json.dumps(report.as_dict(), sort_keys=True) if args.json else report.table())
    return EXIT_OK


def cmd_selfcheck(args) -> int:
    from .selfcheck import run_selfcheck

    return EXIT_OK if run_selfcheck(out=sys.stdout, seed=args.seed) else EXIT_NUMERIC


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="raft-stereo", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("infer", help="estimate disparity for one stereo pair")
    p.add_argument("left")
    p.add_argument("right")
    p.add_argument("--out", required=True, help="output PFM path")
    p.add_argument("--png", help="optional colour-mapped PNG (a .range.txt sidecar records min/max)")
    p.add_argument("--checkpoint")
    p.add_argument("--iters", type=int, default=32)
    p.add_argument("--slow-fast", action="store_true", help="coarse levels update 2x/3x as often")
    p.add_argument("--seed", type=int, default=0)
    _add_arch_flags(p)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("train", help="train on synthetic data from a JSON run description")
    p.add_argument("config")
    p.add_argument("--out-dir")
    p.add_argument("--steps", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="compare predicted and ground-truth PFM directories")
    p.add_argument("pred_dir")
    p.add_argument("gt_dir")
    p.add_argument("--thresholds", type=float, nargs="+", default=[0.5, 1.0, 2.0, 3.0, 4.0])
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="per-stage MAC/time table for a configuration")
    _add_arch_flags(p)
    p.add_argument("--slow-fast", action="store_true")
    p.add_argument("--iters", type=int, default=32)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=128)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("selfcheck", help="run built-in oracle and gradient checks")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_selfcheck)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    from .io import CheckpointError, PFMError
    from .training import NonFiniteLossError

    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, PFMError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (NumericError, NonFiniteLossError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ContractError, ShapeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
