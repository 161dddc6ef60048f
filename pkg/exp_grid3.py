"""Scratch: w weight decay as the collapse lever."""
import itertools, sys
from concurrent.futures import ProcessPoolExecutor
import numpy as np
from desknas.datasets import make_blobs
from desknas.search import SearchSettings, run_search
from desknas.space import StackSpec
from desknas.regularizers import RegularizerSpec

def one(args):
    noise, w_wd, kind, seed = args
    ds = make_blobs(256, seed=11, noise=noise)
    stack = StackSpec(cells=2, channels=8, image_hw=(8, 8), classes=2)
    if kind == "l2":
        reg = RegularizerSpec(kind="l2", lam={"kind": "constant", "value": 1e-3}); wd = 1e-3
    else:
        reg = RegularizerSpec(kind="sa", lam={"kind": "linear", "divisor": 5}); wd = 0.0
    s = SearchSettings(epochs=50, seed=seed, batch_size=16, alpha_lr=0.02,
                       alpha_weight_decay=wd, w_lr=0.005, w_weight_decay=w_wd)
    r = run_search("reduced", stack, s, reg, ds)
    ops = [op for _, _, op in r.genotype.normal]
    frac = sum(1 for o in ops if o == "skip_connect") / len(ops)
    return args, frac, r.trace[-1]["val_acc"], r.trace[-1]["alpha_mean"]

if __name__ == "__main__":
    kind = sys.argv[1]
    grid = list(itertools.product((1.0, 1.4), (1e-2, 3e-2), (kind,), (0, 1, 2, 3)))
    with ProcessPoolExecutor(max_workers=2) as pool:
        for args, frac, acc, amean in pool.map(one, grid):
            noise, w_wd, k, seed = args
            print(f"noise={noise} w_wd={w_wd:<5} seed={seed}: skip_frac={frac:.2f} "
                  f"val_acc={acc:.2f} alpha_mean={amean:+.2f}", flush=True)
