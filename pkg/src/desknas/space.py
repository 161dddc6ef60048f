"""Cell topologies, genotypes, and supernet assembly.

Three families are registered:

* ``darts``   - bi-chain cells with 2 input nodes, 4 intermediate nodes and an
  output concat; 14 searchable edges with 8 candidate ops per edge.
* ``nb201``   - a fixed 4-node, 6-edge DAG with 5 candidate ops; every edge is
  kept at discretization time.
* ``reduced`` - the nb201 topology restricted to {avg pool, conv3x3, skip}.
* ``micro``   - the reduced space with only the chain edges (0,1),(1,2),(2,3)
  searchable and the remaining edges fixed to skip; 27 genotypes total, small
  enough to enumerate and train exhaustively.

Candidate lists are ordered alphabetically; architecture-weight columns refer
to this order.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import CatalogError, ContractError, DimensionError
from .mixed import (ArchParams, mixed_forward, node_aggregate,
                    partial_channel_forward)
from .ops import OP_FACTORIES, ReluConv, _kaiming_uniform, make_op, op_cost


@dataclass(frozen=True)
class CellTopology:
    name: str
    num_nodes: int
    input_nodes: int
    edges: tuple[tuple[int, int], ...]
    candidates: tuple[str, ...]
    fixed_edges: dict = field(default_factory=dict)
    reduction: bool = False
    concat_nodes: tuple[int, ...] | None = None  # None: output = last node

    def __post_init__(self):
        for i, j in self.edges:
            if i >= j:
                raise ContractError(f"edge ({i},{j}) is not forward in the DAG")
        for name in self.candidates:
            if name not in OP_FACTORIES:
                raise CatalogError(f"unknown candidate op {name!r}")
        for name in self.fixed_edges.values():
            if name not in OP_FACTORIES:
                raise CatalogError(f"unknown fixed op {name!r}")

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @property
    def num_ops(self) -> int:
        return len(self.candidates)

    def incoming(self, node: int) -> list[int]:
        """Indices into ``edges`` of the searchable edges entering ``node``."""
        return [k for k, (_, j) in enumerate(self.edges) if j == node]

    def gamma_group(self, node: int) -> tuple[int, int]:
        """(start, length) of the node's contiguous edge block."""
        idx = self.incoming(node)
        if not idx:
            return (0, 0)
        return idx[0], len(idx)


def _dense_edges(num_nodes: int, input_nodes: int) -> tuple[tuple[int, int], ...]:
    edges = []
    for j in range(input_nodes, num_nodes):
        for i in range(j):
            edges.append((i, j))
    return tuple(edges)


DARTS_CANDIDATES = ("avg_pool3x3", "dil_conv3x3", "dil_conv5x5", "max_pool3x3",
                    "none", "sep_conv3x3", "sep_conv5x5", "skip_connect")
NB201_CANDIDATES = ("avg_pool3x3", "conv1x1", "conv3x3", "none", "skip_connect")
REDUCED_CANDIDATES = ("avg_pool3x3", "conv3x3", "skip_connect")

_MICRO_SEARCHABLE = ((0, 1), (1, 2), (2, 3))


def _darts_topology(reduction: bool) -> CellTopology:
    return CellTopology(
        name="reduce" if reduction else "normal",
        num_nodes=6, input_nodes=2,
        edges=_dense_edges(6, 2),
        candidates=DARTS_CANDIDATES,
        reduction=reduction,
        concat_nodes=(2, 3, 4, 5),
    )


def _dag4_topology(candidates) -> CellTopology:
    return CellTopology(
        name="normal", num_nodes=4, input_nodes=1,
        edges=_dense_edges(4, 1), candidates=tuple(candidates),
    )


def _micro_topology() -> CellTopology:
    all_edges = _dense_edges(4, 1)
    fixed = {e: "skip_connect" for e in all_edges if e not in _MICRO_SEARCHABLE}
    return CellTopology(
        name="normal", num_nodes=4, input_nodes=1,
        edges=_MICRO_SEARCHABLE, candidates=REDUCED_CANDIDATES,
        fixed_edges=fixed,
    )


def space_topologies(space: str) -> dict[str, CellTopology]:
    """Cell-type name -> topology for one of the registered spaces."""
    if space == "darts":
        return {"normal": _darts_topology(False), "reduce": _darts_topology(True)}
    if space == "nb201":
        return {"normal": _dag4_topology(NB201_CANDIDATES)}
    if space == "reduced":
        return {"normal": _dag4_topology(REDUCED_CANDIDATES)}
    if space == "micro":
        return {"normal": _micro_topology()}
    raise CatalogError(f"unknown space {space!r}")


SPACE_IDS = ("darts", "nb201", "reduced", "micro")


# ---------------------------------------------------------------------------
# genotypes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Genotype:
    space: str
    normal: tuple[tuple[int, int, str], ...]
    reduce: tuple[tuple[int, int, str], ...] = ()

    def edges_for(self, cell_type: str):
        return self.reduce if cell_type == "reduce" else self.normal

    def canonical(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def to_dict(self) -> dict:
        return {
            "space": self.space,
            "normal": [[i, j, op] for i, j, op in self.normal],
            "reduce": [[i, j, op] for i, j, op in self.reduce],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Genotype":
        return cls(
            space=d["space"],
            normal=tuple((int(i), int(j), str(op)) for i, j, op in d["normal"]),
            reduce=tuple((int(i), int(j), str(op)) for i, j, op in d.get("reduce", [])),
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "Genotype":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def validate_genotype(genotype: Genotype, topologies: dict[str, CellTopology]) -> None:
    for cell_type, topo in topologies.items():
        chosen = genotype.edges_for(cell_type)
        for i, j, op in chosen:
            if op not in OP_FACTORIES:
                raise CatalogError(f"genotype references unknown op {op!r}")
        edge_set = {(i, j) for i, j, _ in chosen}
        searchable = set(topo.edges)
        fixed = set(topo.fixed_edges)
        if not edge_set <= (searchable | fixed):
            raise ContractError(
                f"genotype edges {sorted(edge_set - searchable - fixed)} not in "
                f"{topo.name} topology")
        if topo.concat_nodes is not None:
            for node in range(topo.input_nodes, topo.num_nodes):
                kept = sum(1 for _, j, _ in chosen if j == node)
                if kept != 2:
                    raise ContractError(
                        f"node {node} keeps {kept} edges, expected 2")
        else:
            if edge_set != searchable | fixed:
                raise ContractError(
                    f"{topo.name} genotype must cover all edges exactly once")


def enumerate_genotypes(space: str) -> list[Genotype]:
    """All discrete architectures of a space (single-cell-type spaces only)."""
    topos = space_topologies(space)
    if set(topos) != {"normal"}:
        raise ContractError(f"enumeration not supported for space {space!r}")
    topo = topos["normal"]
    fixed = [(i, j, op) for (i, j), op in sorted(topo.fixed_edges.items())]
    out = []
    for combo in itertools.product(topo.candidates, repeat=topo.num_edges):
        chosen = [(i, j, op) for (i, j), op in zip(topo.edges, combo)]
        allel = tuple(sorted(chosen + fixed, key=lambda t: (t[1], t[0])))
        out.append(Genotype(space=space, normal=allel))
    return out


# ---------------------------------------------------------------------------
# supernet
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StackSpec:
    cells: int = 1
    channels: int = 8
    reductions: tuple[int, ...] = ()
    in_channels: int = 1
    image_hw: tuple[int, int] = (8, 8)
    classes: int = 2

    def __post_init__(self):
        if self.cells < 1 or self.channels < 1:
            raise ContractError("stack needs at least one cell and one channel")


class _Stem:
    def __init__(self, cin, cout, rng):
        self.conv = ReluConv(cin, cout, 3, 1, rng, relu=False)

    def __call__(self, x):
        return self.conv(x)

    def params(self):
        return self.conv.params()


class _Classifier:
    def __init__(self, cin, classes, rng):
        self.w = _kaiming_uniform(rng, (cin, classes), cin)
        self.b = Tensor(np.zeros(classes), requires_grad=True)

    def __call__(self, x):
        pooled = ag.tmean(x, axis=(2, 3))
        return ag.add(ag.matmul(pooled, self.w), self.b)

    def params(self):
        return [self.w, self.b]


class MixedCell:
    """One cell of the supernet: every candidate op on every searchable edge."""

    def __init__(self, topo: CellTopology, channels: int, rng,
                 partial_k: int | None = None,
                 c_prev_prev: int | None = None, c_prev: int | None = None,
                 reduction_prev: bool = False):
        self.topo = topo
        self.channels = channels
        self.partial_k = partial_k
        self.pre0 = self.pre1 = None
        if topo.input_nodes == 2:
            self.pre0 = ReluConv(c_prev_prev, channels, 1,
                                 2 if reduction_prev else 1, rng)
            self.pre1 = ReluConv(c_prev, channels, 1, 1, rng)

        mix_c = channels // partial_k if partial_k else channels
        if partial_k and mix_c < 1:
            raise ContractError(
                f"partial-channel k={partial_k} leaves no channels at width {channels}")
        self.edge_ops = []
        self.edge_strides = []
        for (i, j) in topo.edges:
            stride = 2 if topo.reduction and i < topo.input_nodes else 1
            if partial_k and stride != 1:
                # bypass channels cannot change shape; reduction edges mix fully
                built = [(n, make_op(n, channels, channels, stride, rng))
                         for n in topo.candidates]
                self.edge_strides.append((stride, False))
            else:
                built = [(n, make_op(n, mix_c, mix_c, stride, rng))
                         for n in topo.candidates]
                self.edge_strides.append((stride, bool(partial_k)))
            self.edge_ops.append(built)
        self.fixed_ops = {}
        for (i, j), name in sorted(topo.fixed_edges.items()):
            stride = 2 if topo.reduction and i < topo.input_nodes else 1
            self.fixed_ops[(i, j)] = make_op(name, channels, channels, stride, rng)

    @property
    def out_channels(self) -> int:
        if self.topo.concat_nodes is not None:
            return self.channels * len(self.topo.concat_nodes)
        return self.channels

    def params(self):
        out = []
        for pre in (self.pre0, self.pre1):
            if pre is not None:
                out.extend(pre.params())
        for built in self.edge_ops:
            for _, op in built:
                out.extend(op.params())
        for op in self.fixed_ops.values():
            out.extend(op.params())
        return out

    def forward(self, inputs, beta_table, gamma_vec=None, pc_rng=None):
        """inputs: list of node-0..input_nodes-1 tensors (already cell inputs)."""
        if self.topo.input_nodes == 2:
            states = [self.pre0(inputs[0]), self.pre1(inputs[1])]
        else:
            states = [inputs[0]]
        for node in range(self.topo.input_nodes, self.topo.num_nodes):
            contributions = []
            for k in self.topo.incoming(node):
                i, _ = self.topo.edges[k]
                row = (ag.narrow(beta_table, 0, k, 1)
                       if isinstance(beta_table, Tensor) else beta_table[k])
                _, use_pc = self.edge_strides[k]
                if use_pc:
                    contributions.append(partial_channel_forward(
                        states[i], self.edge_ops[k], row, self.partial_k, pc_rng))
                else:
                    contributions.append(
                        mixed_forward(states[i], self.edge_ops[k], row))
            gamma_group = None
            if gamma_vec is not None and contributions:
                start, length = self.topo.gamma_group(node)
                if length:
                    gamma_group = (ag.narrow(gamma_vec, 0, start, length)
                                   if isinstance(gamma_vec, Tensor)
                                   else gamma_vec[start:start + length])
            agg = (node_aggregate(contributions, gamma_group)
                   if contributions else None)
            for (i, j), op in self.fixed_ops.items():
                if j != node:
                    continue
                term = op(states[i])
                agg = term if agg is None else ag.add(agg, term)
            states.append(agg)
        if self.topo.concat_nodes is not None:
            return ag.concat([states[n] for n in self.topo.concat_nodes], axis=1)
        return states[-1]


def init_arch_params(strategy: dict, topologies: dict[str, CellTopology],
                     seed: int, with_gamma: bool = False) -> ArchParams:
    """Seeded architecture-weight initialization.

    Strategies: {"kind": "small-random"} draws U(-1e-3, 1e-3);
    {"kind": "constant-offset", "op": name, "delta": d} puts d on one op
    column, zero elsewhere; {"kind": "constant-negative", "value": v} fills
    every entry with v.
    """
    kind = strategy.get("kind", "small-random")
    rng = np.random.default_rng(np.random.SeedSequence((seed, 1)))
    alpha, gamma, order = {}, {}, {}
    for cell_type, topo in sorted(topologies.items()):
        shape = (topo.num_edges, topo.num_ops)
        if kind == "small-random":
            table = rng.uniform(-1e-3, 1e-3, size=shape)
        elif kind == "constant-offset":
            op = strategy["op"]
            if op not in topo.candidates:
                raise CatalogError(
                    f"constant-offset op {op!r} not in candidates {topo.candidates}")
            table = np.zeros(shape)
            table[:, topo.candidates.index(op)] = float(strategy["delta"])
        elif kind == "constant-negative":
            table = np.full(shape, float(strategy["value"]))
        else:
            raise ContractError(f"unknown alpha init strategy {kind!r}")
        alpha[cell_type] = Tensor(table, requires_grad=True)
        order[cell_type] = list(topo.candidates)
        if with_gamma:
            gamma[cell_type] = Tensor(
                rng.uniform(-1e-3, 1e-3, size=topo.num_edges), requires_grad=True)
    return ArchParams(alpha=alpha, gamma=gamma if with_gamma else None,
                      op_order=order)


class Supernet:
    """Stacked mixed cells with shared per-type architecture weights."""

    def __init__(self, space: str, stack: StackSpec, seed: int,
                 partial_k: int | None = None, arch: ArchParams | None = None,
                 topologies: dict[str, CellTopology] | None = None):
        self.space = space
        self.stack = stack
        self.seed = seed
        self.partial_k = partial_k
        self.topologies = topologies or space_topologies(space)
        rng = np.random.default_rng(np.random.SeedSequence((seed, 0)))

        bi_chain = any(t.input_nodes == 2 for t in self.topologies.values())
        if not bi_chain and stack.reductions:
            raise ContractError("reduction positions require the bi-chain space")

        c = stack.channels
        self.stem = _Stem(stack.in_channels, c, rng)
        self.cells = []
        self.cell_types = []
        if bi_chain:
            c_pp = c_p = c
            reduction_prev = False
            for idx in range(stack.cells):
                reduction = idx in stack.reductions
                if reduction:
                    c *= 2
                cell_type = "reduce" if reduction else "normal"
                topo = self.topologies[cell_type]
                cell = MixedCell(topo, c, rng, partial_k,
                                 c_prev_prev=c_pp, c_prev=c_p,
                                 reduction_prev=reduction_prev)
                self.cells.append(cell)
                self.cell_types.append(cell_type)
                c_pp, c_p = c_p, cell.out_channels
                reduction_prev = reduction
            head_c = c_p
        else:
            topo = self.topologies["normal"]
            for _ in range(stack.cells):
                cell = MixedCell(topo, c, rng, partial_k)
                self.cells.append(cell)
                self.cell_types.append("normal")
            head_c = c
        self.head = _Classifier(head_c, stack.classes, rng)
        self.arch = arch if arch is not None else init_arch_params(
            {"kind": "small-random"}, self.topologies, seed,
            with_gamma=partial_k is not None)

    def parameters(self) -> list[Tensor]:
        out = self.stem.params()
        for cell in self.cells:
            out.extend(cell.params())
        out.extend(self.head.params())
        return out

    def arch_tensors(self) -> list[Tensor]:
        return self.arch.tensors()

    def beta_tables(self) -> dict[str, "Tensor"]:
        return {t: ag.softmax(a, axis=1) for t, a in self.arch.alpha.items()}

    def forward(self, x, betas=None, gammas=None, pc_rng=None):
        if self.partial_k and pc_rng is None:
            raise ContractError("partial-channel supernet forward needs pc_rng")
        if betas is None:
            betas = self.beta_tables()
        if gammas is None and self.arch.gamma is not None:
            gammas = self.arch.gamma
        x = x if isinstance(x, Tensor) else Tensor(x)
        s = self.stem(x)
        bi_chain = any(t.input_nodes == 2 for t in self.topologies.values())
        if bi_chain:
            s0 = s1 = s
            for cell, cell_type in zip(self.cells, self.cell_types):
                out = cell.forward([s0, s1], betas[cell_type],
                                   gammas[cell_type] if gammas else None, pc_rng)
                s0, s1 = s1, out
            return self.head(s1)
        for cell, cell_type in zip(self.cells, self.cell_types):
            s = cell.forward([s], betas[cell_type],
                             gammas[cell_type] if gammas else None, pc_rng)
        return self.head(s)


def build_supernet(space: str, stack: StackSpec, seed: int,
                   partial_k: int | None = None,
                   arch_init: dict | None = None) -> Supernet:
    topologies = space_topologies(space)
    arch = init_arch_params(arch_init or {"kind": "small-random"}, topologies,
                            seed, with_gamma=partial_k is not None)
    return Supernet(space, stack, seed, partial_k=partial_k, arch=arch,
                    topologies=topologies)


# ---------------------------------------------------------------------------
# discrete networks
# ---------------------------------------------------------------------------

class DiscreteCell:
    def __init__(self, topo: CellTopology, chosen, channels, rng=None,
                 inherit: MixedCell | None = None,
                 c_prev_prev=None, c_prev=None, reduction_prev=False):
        self.topo = topo
        self.channels = channels
        self.chosen = tuple(chosen)
        self.pre0 = self.pre1 = None
        if inherit is not None:
            self.pre0, self.pre1 = inherit.pre0, inherit.pre1
        elif topo.input_nodes == 2:
            self.pre0 = ReluConv(c_prev_prev, channels, 1,
                                 2 if reduction_prev else 1, rng)
            self.pre1 = ReluConv(c_prev, channels, 1, 1, rng)

        searchable = {e: k for k, e in enumerate(topo.edges)}
        self.ops = []
        for i, j, name in self.chosen:
            stride = 2 if topo.reduction and i < topo.input_nodes else 1
            if inherit is not None:
                if (i, j) in searchable:
                    built = dict(inherit.edge_ops[searchable[(i, j)]])
                    op = built[name]
                else:
                    op = inherit.fixed_ops[(i, j)]
            else:
                op = make_op(name, channels, channels, stride, rng)
            self.ops.append(((i, j), op))

    @property
    def out_channels(self):
        if self.topo.concat_nodes is not None:
            return self.channels * len(self.topo.concat_nodes)
        return self.channels

    def params(self):
        out = []
        for pre in (self.pre0, self.pre1):
            if pre is not None:
                out.extend(pre.params())
        for _, op in self.ops:
            out.extend(op.params())
        return out

    def forward(self, inputs):
        if self.topo.input_nodes == 2:
            states = [self.pre0(inputs[0]), self.pre1(inputs[1])]
        else:
            states = [inputs[0]]
        for node in range(self.topo.input_nodes, self.topo.num_nodes):
            agg = None
            for (i, j), op in self.ops:
                if j != node:
                    continue
                term = op(states[i])
                agg = term if agg is None else ag.add(agg, term)
            if agg is None:
                raise ContractError(f"node {node} has no kept incoming edge")
            states.append(agg)
        if self.topo.concat_nodes is not None:
            return ag.concat([states[n] for n in self.topo.concat_nodes], axis=1)
        return states[-1]


class DiscreteNet:
    def __init__(self, genotype: Genotype, stack: StackSpec, seed: int | None = None,
                 inherit: Supernet | None = None):
        self.genotype = genotype
        self.stack = stack
        if inherit is not None:
            self.topologies = inherit.topologies
        else:
            self.topologies = space_topologies(genotype.space)
        validate_genotype(genotype, self.topologies)
        rng = (np.random.default_rng(np.random.SeedSequence((seed, 0)))
               if inherit is None else None)

        bi_chain = any(t.input_nodes == 2 for t in self.topologies.values())
        c = stack.channels
        self.stem = inherit.stem if inherit is not None else _Stem(
            stack.in_channels, c, rng)
        self.cells = []
        if bi_chain:
            c_pp = c_p = c
            reduction_prev = False
            for idx in range(stack.cells):
                reduction = idx in stack.reductions
                if reduction:
                    c *= 2
                cell_type = "reduce" if reduction else "normal"
                topo = self.topologies[cell_type]
                cell = DiscreteCell(
                    topo, genotype.edges_for(cell_type), c, rng,
                    inherit=inherit.cells[idx] if inherit is not None else None,
                    c_prev_prev=c_pp, c_prev=c_p, reduction_prev=reduction_prev)
                self.cells.append(cell)
                c_pp, c_p = c_p, cell.out_channels
                reduction_prev = reduction
            head_c = c_p
        else:
            topo = self.topologies["normal"]
            for idx in range(stack.cells):
                cell = DiscreteCell(
                    topo, genotype.edges_for("normal"), c, rng,
                    inherit=inherit.cells[idx] if inherit is not None else None)
                self.cells.append(cell)
            head_c = c
        self.head = inherit.head if inherit is not None else _Classifier(
            head_c, stack.classes, rng)
        self.bi_chain = bi_chain

    def parameters(self) -> list[Tensor]:
        out = self.stem.params()
        for cell in self.cells:
            out.extend(cell.params())
        out.extend(self.head.params())
        return out

    def forward(self, x):
        x = x if isinstance(x, Tensor) else Tensor(x)
        s = self.stem(x)
        if self.bi_chain:
            s0 = s1 = s
            for cell in self.cells:
                s0, s1 = s1, cell.forward([s0, s1])
            return self.head(s1)
        for cell in self.cells:
            s = cell.forward([s])
        return self.head(s)


def instantiate_discrete(genotype: Genotype, stack: StackSpec, seed: int) -> DiscreteNet:
    """Discrete network built from scratch (fresh seeded weights)."""
    return DiscreteNet(genotype, stack, seed=seed)


def child_with_inherited_weights(supernet: Supernet, genotype: Genotype) -> DiscreteNet:
    """Discrete network sharing the supernet's tensors for the chosen ops."""
    return DiscreteNet(genotype, supernet.stack, inherit=supernet)


def count_cost(target, input_shape, stride: int = 1) -> dict:
    """Analytic {params, mult_adds} for an op name or a whole genotype."""
    if isinstance(target, Genotype):
        total = {"params": 0, "mult_adds": 0}
        for _, _, name in tuple(target.normal) + tuple(target.reduce):
            c = op_cost(name, input_shape, stride)
            total["params"] += c["params"]
            total["mult_adds"] += c["mult_adds"]
        return total
    return op_cost(target, input_shape, stride)
