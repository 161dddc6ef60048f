"""Auxiliary losses on the architecture weights.

The smooth-activation loss wraps every entry in an erf-based smooth maxout,

    per-entry value = [(1+nu)*a + (1-nu)*a*erf(mu*(1-nu)*a)] / 2,

normalized by (num ops * num edges) per table and scaled by a per-epoch
coefficient.  With nu=1 or mu=0 it collapses exactly to mean regularization;
with mu -> infinity it approaches max(a, nu*a), a leaky-rectifier shape.
The log-sum-exp and plain quadratic penalties are the two baselines.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ContractError

VALID_KINDS = ("none", "l2", "lse", "sa")


@dataclass
class RegularizerSpec:
    kind: str = "none"
    lam: dict = field(default_factory=lambda: {"kind": "linear", "divisor": 5})
    nu: float = 1.0
    mu: float = 0.0
    flops_weight: float = 0.0

    def __post_init__(self):
        if self.kind not in VALID_KINDS:
            raise ContractError(f"regularizer kind {self.kind!r} not in {VALID_KINDS}")
        if not 0.0 <= self.nu <= 1.0:
            raise ContractError(f"nu must lie in [0, 1], got {self.nu}")
        if self.mu < 0.0:
            raise ContractError(f"mu must be >= 0, got {self.mu}")
        if self.flops_weight < 0.0:
            raise ContractError(f"flops_weight must be >= 0, got {self.flops_weight}")


def _tables(alpha) -> list[Tensor]:
    if isinstance(alpha, Tensor):
        return [alpha]
    if isinstance(alpha, dict):
        return [alpha[k] for k in sorted(alpha)]
    return list(alpha)


def sa_loss(alpha, lambda_e: float, nu: float = 1.0, mu: float = 0.0) -> Tensor:
    """Smooth-activation penalty, normalized per table and summed over tables."""
    if lambda_e < 0:
        raise ContractError(f"lambda_e must be >= 0, got {lambda_e}")
    total = None
    c = mu * (1.0 - nu)
    for table in _tables(alpha):
        linear = ag.mul(table, (1.0 + nu) / 2.0)
        odd = ag.mul(ag.mul(table, ag.erf(ag.mul(table, c))), (1.0 - nu) / 2.0)
        per_entry = ag.add(linear, odd)
        scaled = ag.mul(ag.tsum(per_entry), lambda_e / table.size)
        total = scaled if total is None else ag.add(total, scaled)
    return total


def sa_entry_values(alpha: np.ndarray, nu: float, mu: float) -> np.ndarray:
    """Per-entry smooth-activation values on plain arrays (no tape)."""
    a = np.asarray(alpha, dtype=np.float64)
    c = mu * (1.0 - nu)
    return ((1.0 + nu) * a + (1.0 - nu) * a * ag.erf_forward(c * a)) / 2.0


def lse_loss(alpha, lambda_b: float) -> Tensor:
    """Per-edge log-sum-exp (smooth max) summed over edges and tables."""
    total = None
    for table in _tables(alpha):
        per_edge = ag.logsumexp(table, axis=1)
        scaled = ag.mul(ag.tsum(per_edge), lambda_b)
        total = scaled if total is None else ag.add(total, scaled)
    return total


def l2_loss(alpha, lambda_2: float) -> Tensor:
    total = None
    for table in _tables(alpha):
        scaled = ag.mul(ag.tsum(ag.mul(table, table)), lambda_2)
        total = scaled if total is None else ag.add(total, scaled)
    return total


def flops_loss(betas, costs) -> Tensor:
    """Expected relative cost, one term in [0, 1] per searchable site.

    ``betas``: beta tables (tensors); ``costs``: per-op cost vector for each
    table, nonnegative with a positive sum.
    """
    beta_tables = _tables(betas)
    if isinstance(costs, dict):
        cost_rows = [np.asarray(costs[k], dtype=np.float64) for k in sorted(costs)]
    elif isinstance(costs, np.ndarray) or (costs and np.isscalar(costs[0])):
        cost_rows = [np.asarray(costs, dtype=np.float64)]
    else:
        cost_rows = [np.asarray(c, dtype=np.float64) for c in costs]
    if len(cost_rows) == 1 and len(beta_tables) > 1:
        cost_rows = cost_rows * len(beta_tables)
    total = None
    for beta, c in zip(beta_tables, cost_rows):
        if np.any(c < 0):
            raise ContractError("cost vector must be nonnegative")
        csum = c.sum()
        if csum <= 0:
            raise ContractError("cost vector must have a positive sum")
        per_site = ag.tsum(ag.mul(beta, c / csum), axis=1)
        term = ag.tsum(per_site)
        total = term if total is None else ag.add(total, term)
    return total


def lambda_schedule(epoch: int, spec: dict) -> float:
    """Per-epoch coefficient: linear epoch/divisor or constant, with an
    optional zero-hold for the first ``zero_until`` epochs."""
    if epoch < 0:
        raise ContractError(f"epoch must be >= 0, got {epoch}")
    if epoch < int(spec.get("zero_until", 0)):
        return 0.0
    kind = spec.get("kind", "linear")
    if kind == "linear":
        divisor = spec.get("divisor", 5)
        if divisor <= 0:
            raise ContractError(f"schedule divisor must be positive, got {divisor}")
        return epoch / divisor
    if kind == "constant":
        return float(spec["value"])
    raise ContractError(f"unknown lambda schedule kind {kind!r}")


def arch_loss(spec: RegularizerSpec, alpha, betas, epoch: int,
              costs=None) -> Tensor | None:
    """Combined auxiliary loss for the architecture step (None when inactive)."""
    lam = lambda_schedule(epoch, spec.lam)
    total = None
    if spec.kind == "sa":
        total = sa_loss(alpha, lam, spec.nu, spec.mu)
    elif spec.kind == "lse":
        total = lse_loss(alpha, lam)
    elif spec.kind == "l2":
        total = l2_loss(alpha, lam)
    if spec.flops_weight > 0.0:
        if costs is None:
            raise ContractError("flops_weight > 0 requires per-op cost vectors")
        term = ag.mul(flops_loss(betas, costs), spec.flops_weight)
        total = term if total is None else ag.add(total, term)
    return total
