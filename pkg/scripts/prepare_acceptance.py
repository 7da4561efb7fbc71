"""Train (or reuse) the three desk-scale models used by the acceptance suite."""

import logging
import os
import sys

from raft_stereo.recipes import toy_spec, train_cached

CACHE = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "artifacts", "runs")

RUNS = {
    "toy3": toy_spec(levels=3),
    "toy1": toy_spec(levels=1),
    "toy3-shared": toy_spec(levels=3, shared_backbone=True),
}

if __name__ == "__main__":
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    names = sys.argv[1:] or list(RUNS)
    for name in names:
        _, summary, _ = train_cached(RUNS[name], CACHE, name)
        print(name, f"{summary['seconds']:.0f}s", f"final loss {summary['final_loss']:.4f}", flush=True)
