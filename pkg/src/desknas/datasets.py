"""Seeded synthetic image classification tasks.

Both tasks are built so that the class signal survives global average pooling
only through genuinely convolutional features: raw-pixel statistics are
matched across classes, so identity and pooling paths carry much weaker
signal than a trained convolution.

* ``blobs`` - two classes of equal-mass Gaussian bumps at random positions
  distinguished only by their width (tight vs spread).
* ``bars``  - four classes of soft oriented bars (0/45/90/135 degrees) at
  random positions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError


@dataclass
class Dataset:
    x: np.ndarray
    y: np.ndarray
    classes: int
    spec: dict = field(default_factory=dict)

    def __len__(self):
        return self.x.shape[0]


def make_blobs(n: int, seed: int, size: int = 8, noise: float = 0.3) -> Dataset:
    rng = np.random.default_rng(np.random.SeedSequence((seed, 101)))
    xs = np.zeros((n, 1, size, size))
    ys = rng.integers(0, 2, size=n)
    grid = np.arange(size)
    yy, xx = np.meshgrid(grid, grid, indexing="ij")
    sigmas = (0.7, 1.6)
    margin = 2.0
    for i in range(n):
        cy, cx = rng.uniform(margin, size - 1 - margin, size=2)
        s = sigmas[ys[i]]
        bump = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * s * s))
        bump /= bump.sum()
        xs[i, 0] = bump * size * size / 4.0
    xs += rng.normal(0.0, noise, size=xs.shape)
    xs = (xs - xs.mean()) / (xs.std() + 1e-12)
    return Dataset(x=xs, y=ys.astype(np.int64), classes=2,
                   spec={"name": "blobs", "n": n, "seed": seed, "size": size,
                         "noise": noise})


def make_bars(n: int, seed: int, size: int = 16, noise: float = 0.3) -> Dataset:
    rng = np.random.default_rng(np.random.SeedSequence((seed, 102)))
    xs = np.zeros((n, 1, size, size))
    ys = rng.integers(0, 4, size=n)
    angles = np.deg2rad([0.0, 45.0, 90.0, 135.0])
    grid = np.arange(size)
    yy, xx = np.meshgrid(grid, grid, indexing="ij")
    margin = size / 4.0
    half_len = size * 0.35
    width = 0.9
    for i in range(n):
        theta = angles[ys[i]]
        cy, cx = rng.uniform(margin, size - 1 - margin, size=2)
        dy, dx = np.sin(theta), np.cos(theta)
        along = (yy - cy) * dy + (xx - cx) * dx
        across = -(yy - cy) * dx + (xx - cx) * dy
        bar = np.exp(-(across / width) ** 2) * (np.abs(along) <= half_len)
        xs[i, 0] = bar
    xs += rng.normal(0.0, noise, size=xs.shape)
    xs = (xs - xs.mean()) / (xs.std() + 1e-12)
    return Dataset(x=xs, y=ys.astype(np.int64), classes=4,
                   spec={"name": "bars", "n": n, "seed": seed, "size": size,
                         "noise": noise})


GENERATORS = {"blobs": make_blobs, "bars": make_bars}


def make_dataset(spec: dict) -> Dataset:
    name = spec["name"]
    if name not in GENERATORS:
        raise ContractError(f"unknown dataset generator {name!r}")
    kwargs = {k: v for k, v in spec.items() if k != "name"}
    return GENERATORS[name](**kwargs)


class Split:
    """Index subset of a dataset with per-purpose access counters."""

    def __init__(self, dataset: Dataset, indices: np.ndarray, name: str):
        self.dataset = dataset
        self.indices = np.asarray(indices, dtype=np.intp)
        self.name = name
        self.counts: dict[str, int] = {}

    def __len__(self):
        return len(self.indices)

    def num_batches(self, batch_size: int) -> int:
        return -(-len(self.indices) // batch_size)

    def iter_batches(self, batch_size: int, rng: np.random.Generator | None = None,
                     purpose: str = "eval"):
        order = self.indices
        if rng is not None:
            order = order[rng.permutation(len(order))]
        for start in range(0, len(order), batch_size):
            sel = order[start:start + batch_size]
            self.counts[purpose] = self.counts.get(purpose, 0) + 1
            yield self.dataset.x[sel], self.dataset.y[sel]


def make_splits(dataset: Dataset, fraction: float, seed: int) -> tuple[Split, Split]:
    """Disjoint seeded (train, val) index split covering the dataset."""
    if not 0.0 < fraction < 1.0:
        raise ContractError(f"split fraction must lie in (0, 1), got {fraction}")
    n = len(dataset)
    n_train = int(np.floor(fraction * n))
    if n_train == 0 or n_train == n:
        raise ContractError(
            f"fraction {fraction} leaves an empty split for {n} samples")
    rng = np.random.default_rng(np.random.SeedSequence((seed, 103)))
    perm = rng.permutation(n)
    return (Split(dataset, np.sort(perm[:n_train]), "train"),
            Split(dataset, np.sort(perm[n_train:]), "val"))
