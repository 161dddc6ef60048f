"""Continuous relaxation of the operation choice.

An edge's candidate ops are blended with the softmax of its architecture-weight
row; nodes aggregate incoming edges either by plain sum or by a softmax over
learnable per-node edge weights.  Partial-channel mixing shuffles channels with
a seeded permutation, sends 1/k of them through the blend and passes the rest
through untouched.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ContractError, DimensionError


@dataclass
class PartialChannelConfig:
    """Process 1/k of the (shuffled) channels through the mixed op."""

    k: int

    def __post_init__(self):
        if self.k <= 0:
            raise ContractError(f"partial-channel ratio k must be positive, got {self.k}")


@dataclass
class ArchParams:
    """Per-cell-type architecture weights: alpha [edges x ops], optional gamma.

    Gamma holds one entry per edge, grouped by target node; each group is
    softmax-normalized where it is used.
    """

    alpha: dict[str, Tensor]
    gamma: dict[str, Tensor] | None = None
    op_order: dict[str, list[str]] = field(default_factory=dict)

    def tensors(self) -> list[Tensor]:
        out = list(self.alpha.values())
        if self.gamma is not None:
            out.extend(self.gamma.values())
        return out

    def snapshot(self) -> dict:
        snap = {f"alpha_{k}": v.data.copy() for k, v in self.alpha.items()}
        if self.gamma is not None:
            snap.update({f"gamma_{k}": v.data.copy() for k, v in self.gamma.items()})
        return snap


def beta_of(alpha_row: np.ndarray) -> np.ndarray:
    """Softmax of one architecture-weight row (plain arrays, no tape)."""
    row = np.asarray(alpha_row, dtype=np.float64)
    z = row - row.max()
    e = np.exp(z)
    return e / e.sum()


def _weight_scalar(beta_row, index: int):
    """beta_row may be a (1, N_o) tensor on the tape or a plain 1-D array."""
    if isinstance(beta_row, Tensor):
        return ag.narrow(beta_row, 1, index, 1)
    return float(beta_row[index])


def mixed_forward(x: Tensor, edge_ops, beta_row) -> Tensor:
    """Weighted sum of every candidate output; weights from the edge's beta."""
    out = None
    for idx, (_, op) in enumerate(edge_ops):
        term = ag.mul(_weight_scalar(beta_row, idx), op(x))
        out = term if out is None else ag.add(out, term)
    return out


def partial_channel_forward(x: Tensor, edge_ops, beta_row, k: int,
                            rng: np.random.Generator) -> Tensor:
    """Shuffle channels, blend the first floor(C/k), pass the rest through."""
    if k <= 0:
        raise ContractError(f"partial-channel ratio k must be positive, got {k}")
    channels = x.shape[1]
    if channels < k:
        raise DimensionError(f"partial channels: k={k} exceeds channel count {channels}")
    perm = rng.permutation(channels)
    shuffled = ag.gather(x, perm, axis=1)
    keep = channels // k
    x1 = ag.narrow(shuffled, 1, 0, keep)
    mixed = mixed_forward(x1, edge_ops, beta_row)
    if keep == channels:
        return mixed
    x2 = ag.narrow(shuffled, 1, keep, channels - keep)
    return ag.concat([mixed, x2], axis=1)


def node_aggregate(edge_outputs, gamma_group=None) -> Tensor:
    """Sum incoming edges, softmax-weighted when edge weights are present."""
    shapes = {tuple(t.shape) for t in edge_outputs}
    if len(shapes) > 1:
        raise DimensionError(f"node_aggregate: mismatched edge shapes {sorted(shapes)}")
    if gamma_group is None:
        out = edge_outputs[0]
        for t in edge_outputs[1:]:
            out = ag.add(out, t)
        return out
    if isinstance(gamma_group, Tensor):
        weights = ag.softmax(gamma_group, axis=0)
        terms = [ag.mul(ag.narrow(weights, 0, i, 1), t)
                 for i, t in enumerate(edge_outputs)]
    else:
        w = beta_of(np.asarray(gamma_group))
        terms = [ag.mul(float(w[i]), t) for i, t in enumerate(edge_outputs)]
    out = terms[0]
    for t in terms[1:]:
        out = ag.add(out, t)
    return out
