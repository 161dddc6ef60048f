"""Discretization and the diagnostic metrics used by the experiment recipes.

Includes: argmax derivation with optional edge weights, top-2 softmax
dispersion, per-epoch architecture-weight statistics, the variance/covariance
decomposition of the three-op edge, a seeded two-direction loss-landscape
scan, and the supernet-vs-child discrepancy gap.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ContractError
from .mixed import beta_of
from .space import CellTopology, Genotype, child_with_inherited_weights


def _np_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> float:
    z = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    return float((lse - z[np.arange(len(labels)), labels]).mean())


def evaluate_forward(forward, x: np.ndarray, y: np.ndarray,
                     batch_size: int = 256) -> tuple[float, float]:
    """(mean loss, accuracy) of a forward callable over fixed-order batches."""
    loss_sum = correct = 0.0
    with ag.no_grad():
        for start in range(0, len(y), batch_size):
            xb, yb = x[start:start + batch_size], y[start:start + batch_size]
            logits = forward(xb)
            logits = logits.data if isinstance(logits, Tensor) else logits
            loss_sum += _np_cross_entropy(logits, yb) * len(yb)
            correct += float((logits.argmax(axis=1) == yb).sum())
    n = len(y)
    return loss_sum / n, correct / n


# ---------------------------------------------------------------------------
# derivation
# ---------------------------------------------------------------------------

def derive(alpha: dict, gamma: dict | None, topologies: dict[str, CellTopology],
           space: str = "custom", use_raw_selection: bool = False) -> Genotype:
    """Discretize architecture weights into a genotype.

    Per edge the best non-`none` op is the argmax of the edge's alpha row;
    edge keeping (bi-chain cells keep 2 incoming per node) ranks edges by the
    selected op's alpha, or by softmax(alpha)*softmax(gamma) when edge weights
    are present (raw alpha*gamma behind ``use_raw_selection``).  Ties break on
    the lowest index.
    """
    per_type = {}
    for cell_type, topo in sorted(topologies.items()):
        table = alpha[cell_type]
        table = table.data if isinstance(table, Tensor) else np.asarray(table)
        if not np.all(np.isfinite(table)):
            raise ContractError("derive: alpha contains non-finite entries")
        gvec = None
        if gamma is not None and cell_type in gamma:
            gvec = gamma[cell_type]
            gvec = gvec.data if isinstance(gvec, Tensor) else np.asarray(gvec)

        allowed = [i for i, n in enumerate(topo.candidates) if n != "none"]
        if not allowed:
            raise ContractError("derive: no selectable ops (candidates all `none`)")
        chosen = []
        values = []
        for k in range(topo.num_edges):
            row = table[k]
            best = allowed[int(np.argmax(row[allowed]))]
            if gvec is None:
                value = float(row[best])
            else:
                node = topo.edges[k][1]
                start, length = topo.gamma_group(node)
                pos = k - start
                if use_raw_selection:
                    value = float(row[best] * gvec[k])
                else:
                    gw = beta_of(gvec[start:start + length])
                    value = float(beta_of(row)[best] * gw[pos])
            chosen.append(topo.candidates[best])
            values.append(value)

        if topo.concat_nodes is not None:
            kept = []
            for node in range(topo.input_nodes, topo.num_nodes):
                incoming = topo.incoming(node)
                ranked = sorted(incoming, key=lambda k: (-values[k], k))
                kept.extend(ranked[:2])
            kept = sorted(kept)
        else:
            kept = list(range(topo.num_edges))
        edges = [(topo.edges[k][0], topo.edges[k][1], chosen[k]) for k in kept]
        edges.extend((i, j, op) for (i, j), op in topo.fixed_edges.items())
        per_type[cell_type] = tuple(sorted(edges, key=lambda t: (t[1], t[0])))

    return Genotype(space=space, normal=per_type.get("normal", ()),
                    reduce=per_type.get("reduce", ()))


def min_top2_gap(alpha_table) -> float:
    """Smallest (beta_1 - beta_2) over the table's edges."""
    table = alpha_table.data if isinstance(alpha_table, Tensor) else alpha_table
    gaps = []
    for row in np.asarray(table):
        b = np.sort(beta_of(row))[::-1]
        gaps.append(float(b[0] - b[1]) if len(b) > 1 else 0.0)
    return min(gaps)


# ---------------------------------------------------------------------------
# dispersion
# ---------------------------------------------------------------------------

@dataclass
class DispersionReport:
    trials: list = field(default_factory=list)
    aggregate: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"trials": self.trials, "aggregate": self.aggregate}


def dispersion_report(alpha_tables: list) -> DispersionReport:
    """Top-2 softmax gaps per edge; cross-trial stats of each trial's worst edge."""
    if not alpha_tables:
        raise ContractError("dispersion_report needs at least one trial")
    trials = []
    min_gaps = []
    for table in alpha_tables:
        table = table.data if isinstance(table, Tensor) else np.asarray(table)
        per_edge = []
        for k, row in enumerate(table):
            b = np.sort(beta_of(row))[::-1]
            gap = float(b[0] - b[1]) if len(b) > 1 else 0.0
            per_edge.append({"edge": k, "beta_sorted": [float(v) for v in b],
                             "gap": gap})
        worst = min(per_edge, key=lambda d: d["gap"])
        trials.append({"per_edge": per_edge, "min_gap": worst["gap"],
                       "worst_edge": worst["edge"]})
        min_gaps.append(worst["gap"])
    arr = np.array(min_gaps)
    return DispersionReport(
        trials=trials,
        aggregate={"mean": float(arr.mean()), "std": float(arr.std()),
                   "median": float(np.median(arr)), "count": len(arr)})


def alpha_stats(history: list) -> list[dict]:
    """Per-epoch {mean, median, std} over all entries; population std."""
    rows = []
    for epoch, snap in enumerate(history):
        if isinstance(snap, dict):
            flat = np.concatenate([np.asarray(a).reshape(-1)
                                   for _, a in sorted(snap.items())])
        else:
            flat = np.asarray(snap).reshape(-1)
        rows.append({"epoch": epoch, "mean": float(flat.mean()),
                     "median": float(np.median(flat)),
                     "std": float(flat.std())})
    return rows


# ---------------------------------------------------------------------------
# variance decomposition on a three-op edge
# ---------------------------------------------------------------------------

@dataclass
class VarianceDiagnostics:
    variances: dict
    covariances: dict
    alpha_rhs: dict
    ordering: dict
    exp_sum_lhs: float
    rhs_without_constant: float
    implied_constant: float

    def to_dict(self) -> dict:
        return {"variances": self.variances, "covariances": self.covariances,
                "alpha_rhs": self.alpha_rhs, "ordering": self.ordering,
                "exp_sum_lhs": self.exp_sum_lhs,
                "rhs_without_constant": self.rhs_without_constant,
                "implied_constant": self.implied_constant}


def _role_of(name: str) -> str | None:
    if "conv" in name:
        return "conv"
    if name == "skip_connect":
        return "skip"
    if name.startswith("avg_pool"):
        return "avg"
    return None


def variance_diagnostics(edge_ops, alpha_row, x_batch) -> VarianceDiagnostics:
    """Empirical variances/covariances of each op against the mixed output.

    The mixed output stands in for the unobservable optimum.  Works on the
    three-op (conv / skip / avg pool) edge; the batch needs >= 2 samples.
    """
    x = np.asarray(x_batch, dtype=np.float64)
    if x.shape[0] < 2:
        raise ContractError("variance diagnostics need a batch of >= 2 samples")
    roles = {}
    for idx, (name, _) in enumerate(edge_ops):
        role = _role_of(name)
        if role is not None and role not in roles:
            roles[role] = idx
    if set(roles) != {"conv", "skip", "avg"}:
        raise ContractError(
            f"variance diagnostics need conv/skip/avg candidates, got "
            f"{[n for n, _ in edge_ops]}")
    alpha_row = np.asarray(
        alpha_row.data if isinstance(alpha_row, Tensor) else alpha_row).reshape(-1)
    beta = beta_of(alpha_row)
    with ag.no_grad():
        outs = [op(Tensor(x)).data for _, op in edge_ops]
    mixed = sum(b * o for b, o in zip(beta, outs))
    diffs = {role: outs[idx] - mixed for role, idx in roles.items()}
    variances = {role: float(np.var(d)) for role, d in diffs.items()}

    def cov(a, b):
        return float(((a - a.mean()) * (b - b.mean())).mean())

    covariances = {
        "skip-conv": cov(diffs["skip"], diffs["conv"]),
        "skip-avg": cov(diffs["skip"], diffs["avg"]),
        "conv-avg": cov(diffs["conv"], diffs["avg"]),
    }
    alpha_rhs = {
        "conv": variances["skip"] + variances["avg"],
        "skip": variances["conv"] + variances["avg"],
        "avg": variances["conv"] + variances["skip"],
    }
    ordering = {
        "conv_gt_skip": variances["conv"] > variances["skip"],
        "conv_gt_avg": variances["conv"] > variances["avg"],
        "avg_gt_skip": variances["avg"] > variances["skip"],
    }
    lhs = float(np.exp(alpha_row).sum())
    rhs = 2.0 * sum(variances.values()) - sum(covariances.values())
    return VarianceDiagnostics(
        variances=variances, covariances=covariances, alpha_rhs=alpha_rhs,
        ordering=ordering, exp_sum_lhs=lhs, rhs_without_constant=rhs,
        implied_constant=lhs - rhs)


# ---------------------------------------------------------------------------
# landscape scan and discrepancy
# ---------------------------------------------------------------------------

def _filter_normalized_direction(rng, alpha: np.ndarray) -> np.ndarray:
    d = rng.normal(size=alpha.shape)
    for k in range(alpha.shape[0]):
        dn = np.linalg.norm(d[k])
        an = np.linalg.norm(alpha[k])
        d[k] = d[k] / dn * an if dn > 0 else 0.0
    return d


def landscape_scan(supernet, x: np.ndarray, y: np.ndarray, seed: int,
                   grid, batch_size: int = 256) -> dict:
    """Validation loss/accuracy on a 2-D seeded perturbation grid around the
    current architecture weights (network weights frozen)."""
    grid = np.asarray(grid, dtype=np.float64)
    rng = np.random.default_rng(np.random.SeedSequence((seed, 200)))
    base = {t: a.data.copy() for t, a in supernet.arch.alpha.items()}
    d1 = {t: _filter_normalized_direction(rng, a) for t, a in sorted(base.items())}
    d2 = {t: _filter_normalized_direction(rng, a) for t, a in sorted(base.items())}
    gammas = (None if supernet.arch.gamma is None else
              {t: g.data.copy() for t, g in supernet.arch.gamma.items()})
    rows = []
    for a in grid:
        for b in grid:
            betas = {t: np.stack([beta_of(r) for r in
                                  base[t] + a * d1[t] + b * d2[t]])
                     for t in base}

            def forward(xb):
                pc_rng = (np.random.default_rng(np.random.SeedSequence((seed, 201)))
                          if supernet.partial_k else None)
                return supernet.forward(xb, betas=betas, gammas=gammas,
                                        pc_rng=pc_rng)

            loss, acc = evaluate_forward(forward, x, y, batch_size)
            rows.append({"a": float(a), "b": float(b),
                         "val_loss": loss, "val_acc": acc})
    return {"rows": rows, "directions": {"d1": d1, "d2": d2}}


def discrepancy_gap(supernet, genotype: Genotype, x: np.ndarray, y: np.ndarray,
                    batch_size: int = 256) -> dict:
    """Supernet vs weight-inheriting child metrics on the same data."""
    if supernet.partial_k:
        raise ContractError(
            "discrepancy gap is undefined for partial-channel supernets "
            "(child op shapes differ)")
    betas = {t: np.stack([beta_of(r) for r in a.data])
             for t, a in supernet.arch.alpha.items()}
    gammas = (None if supernet.arch.gamma is None else
              {t: g.data.copy() for t, g in supernet.arch.gamma.items()})
    super_loss, super_acc = evaluate_forward(
        lambda xb: supernet.forward(xb, betas=betas, gammas=gammas),
        x, y, batch_size)
    child = child_with_inherited_weights(supernet, genotype)
    child_loss, child_acc = evaluate_forward(child.forward, x, y, batch_size)
    return {"supernet_loss": super_loss, "supernet_acc": super_acc,
            "child_loss": child_loss, "child_acc": child_acc,
            "loss_gap": child_loss - super_loss,
            "acc_gap": super_acc - child_acc}
