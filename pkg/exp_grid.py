"""Scratch experiment: find the regime where L2 shows skip dominance."""
import itertools
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from desknas.datasets import make_blobs
from desknas.search import SearchSettings, run_search
from desknas.space import StackSpec
from desknas.regularizers import RegularizerSpec


def one(args):
    noise, w_lr, a_lr, cells, kind, seed = args
    ds = make_blobs(256, seed=11, noise=noise)
    stack = StackSpec(cells=cells, channels=8, image_hw=(8, 8), classes=2)
    if kind == "l2":
        reg = RegularizerSpec(kind="l2", lam={"kind": "constant", "value": 1e-3})
        wd = 1e-3
    else:
        reg = RegularizerSpec(kind="sa", lam={"kind": "linear", "divisor": 5})
        wd = 0.0
    s = SearchSettings(epochs=50, seed=seed, batch_size=32, alpha_lr=a_lr,
                       alpha_weight_decay=wd, w_lr=w_lr)
    r = run_search("reduced", stack, s, reg, ds)
    ops = [op for _, _, op in r.genotype.normal]
    frac = sum(1 for o in ops if o == "skip_connect") / len(ops)
    return args, frac, r.trace[-1]["val_acc"], r.trace[-1]["alpha_mean"]


if __name__ == "__main__":
    kind = sys.argv[1] if len(sys.argv) > 1 else "l2"
    grid = list(itertools.product(
        (0.6, 1.0),          # noise
        (5e-3, 2.5e-2),      # w_lr
        (0.02, 0.05),        # alpha_lr
        (1, 2),              # cells
        (kind,),
        (0, 1),              # seeds
    ))
    with ProcessPoolExecutor(max_workers=2) as pool:
        for args, frac, acc, amean in pool.map(one, grid):
            noise, w_lr, a_lr, cells, k, seed = args
            print(f"noise={noise} w_lr={w_lr:<7} a_lr={a_lr:<5} cells={cells} "
                  f"seed={seed}: skip_frac={frac:.2f} val_acc={acc:.2f} "
                  f"alpha_mean={amean:+.2f}", flush=True)
