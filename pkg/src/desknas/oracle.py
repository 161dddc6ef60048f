"""Exhaustive tabular benchmark over a small discrete space.

Every genotype in the space is trained R times from seeded initializations;
final validation accuracies form a lookup table against which searched
genotypes are ranked.  The table is persisted as JSON keyed by canonical
genotype strings and carries a hash of its builder config so stale tables
are detected.
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autograd as ag
from .datasets import Dataset, make_dataset, make_splits
from .errors import ContractError, LookupError_
from .metrics import evaluate_forward
from .optim import SGD, clip_grad_norm, cosine_lr
from .space import (Genotype, StackSpec, enumerate_genotypes,
                    instantiate_discrete)

BENCHMARK_CAP = 256


@dataclass
class TrainCfg:
    steps: int = 400
    batch_size: int = 64
    lr: float = 5e-2
    momentum: float = 0.9
    weight_decay: float = 3e-4
    grad_clip: float = 5.0
    split_fraction: float = 0.5
    split_seed: int = 0


def train_discrete(net, dataset: Dataset, cfg: TrainCfg, seed: int) -> dict:
    """Train a discrete network for a fixed step budget; returns final metrics."""
    train_split, val_split = make_splits(dataset, cfg.split_fraction,
                                         cfg.split_seed)
    opt = SGD(net.parameters(), cfg.lr, momentum=cfg.momentum,
              weight_decay=cfg.weight_decay)
    digest_at = {int(round(f * (cfg.steps - 1))) for f in (0, 0.25, 0.5, 0.75, 1.0)}
    digest = []
    step = 0
    epoch = 0
    while step < cfg.steps:
        order = np.random.default_rng(np.random.SeedSequence((seed, 400, epoch)))
        for xb, yb in train_split.iter_batches(cfg.batch_size, order,
                                               purpose="train"):
            if step >= cfg.steps:
                break
            opt.lr = cosine_lr(cfg.lr, step, cfg.steps)
            logits = net.forward(xb)
            loss = ag.cross_entropy(logits, yb)
            opt.zero_grad()
            ag.backward(loss)
            clip_grad_norm(opt.params, cfg.grad_clip)
            opt.step()
            if step in digest_at:
                digest.append({"step": step, "train_loss": loss.item()})
            step += 1
        epoch += 1
    val_x = dataset.x[val_split.indices]
    val_y = dataset.y[val_split.indices]
    val_loss, val_acc = evaluate_forward(net.forward, val_x, val_y)
    return {"val_acc": val_acc, "val_loss": val_loss, "loss_digest": digest}


@dataclass
class TabularBenchmark:
    space: str
    entries: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    config_hash: str = ""

    def best(self) -> float:
        return max(e["acc_mean"] for e in self.entries.values())

    def save(self, path) -> None:
        doc = {"space": self.space, "entries": self.entries,
               "config": self.config, "config_hash": self.config_hash}
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "TabularBenchmark":
        with open(path) as fh:
            doc = json.load(fh)
        return cls(space=doc["space"], entries=doc["entries"],
                   config=doc["config"], config_hash=doc["config_hash"])


def _builder_config(space, stack, dataset_spec, cfg, seeds) -> dict:
    return {"space": space, "stack": asdict(stack), "dataset": dataset_spec,
            "train": asdict(cfg), "seeds": list(seeds)}


def _config_hash(config: dict) -> str:
    return hashlib.sha256(
        json.dumps(config, sort_keys=True).encode()).hexdigest()


def _train_one(args):
    genotype_dict, stack_dict, dataset_spec, cfg_dict, seeds = args
    genotype = Genotype.from_dict(genotype_dict)
    stack = StackSpec(**{**stack_dict,
                         "reductions": tuple(stack_dict["reductions"]),
                         "image_hw": tuple(stack_dict["image_hw"])})
    dataset = make_dataset(dataset_spec)
    cfg = TrainCfg(**cfg_dict)
    accs, losses, digest = [], [], None
    for s in seeds:
        net = instantiate_discrete(genotype, stack, seed=s)
        out = train_discrete(net, dataset, cfg, seed=s)
        accs.append(out["val_acc"])
        losses.append(out["val_loss"])
        digest = out["loss_digest"]
    params = sum(p.size for p in net.parameters())
    arr = np.array(accs)
    return genotype.canonical(), {
        "acc_mean": float(arr.mean()), "acc_std": float(arr.std()),
        "accs": [float(a) for a in accs],
        "val_losses": [float(v) for v in losses],
        "loss_digest": digest, "params": int(params)}


def build_benchmark(space: str, stack: StackSpec, dataset_spec: dict,
                    cfg: TrainCfg, seeds=(1, 2, 3), jobs: int = 1,
                    cap: int = BENCHMARK_CAP) -> TabularBenchmark:
    genotypes = enumerate_genotypes(space)
    if len(genotypes) > cap:
        raise ContractError(
            f"space {space!r} has {len(genotypes)} genotypes, over the cap {cap}")
    config = _builder_config(space, stack, dataset_spec, cfg, seeds)
    tasks = [(g.to_dict(), asdict(stack), dataset_spec, asdict(cfg), list(seeds))
             for g in genotypes]
    entries = {}
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for key, entry in pool.map(_train_one, tasks):
                entries[key] = entry
    else:
        for task in tasks:
            key, entry = _train_one(task)
            entries[key] = entry
    return TabularBenchmark(space=space, entries=entries, config=config,
                            config_hash=_config_hash(config))


def rank_of(benchmark: TabularBenchmark, genotype: Genotype | str) -> dict:
    """1-based rank by mean accuracy (ties broken lexicographically) and regret."""
    key = genotype.canonical() if isinstance(genotype, Genotype) else genotype
    if key not in benchmark.entries:
        raise LookupError_(f"genotype not in benchmark: {key}")
    ordering = sorted(benchmark.entries.items(),
                      key=lambda kv: (-kv[1]["acc_mean"], kv[0]))
    ranks = {k: i + 1 for i, (k, _) in enumerate(ordering)}
    best = ordering[0][1]["acc_mean"]
    mine = benchmark.entries[key]["acc_mean"]
    return {"rank": ranks[key], "regret": best - mine, "acc_mean": mine,
            "size": len(ordering)}
