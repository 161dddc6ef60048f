"""Search spaces: catalog shapes, topologies, genotypes, supernet assembly."""

from __future__ import annotations

import json

import numpy as np
import pytest

from desknas import autograd as ag
from desknas.errors import CatalogError, ContractError, DimensionError
from desknas.ops import OP_FACTORIES, make_op, op_cost
from desknas.space import (DiscreteNet, Genotype, StackSpec, Supernet,
                           build_supernet, child_with_inherited_weights,
                           count_cost, enumerate_genotypes, init_arch_params,
                           instantiate_discrete, space_topologies,
                           validate_genotype)

RNG = np.random.default_rng(7)


class TestCatalog:
    @pytest.mark.parametrize("name", sorted(OP_FACTORIES))
    def test_stride1_preserves_shape(self, name):
        op = make_op(name, 4, 4, 1, np.random.default_rng(0))
        x = ag.Tensor(RNG.normal(size=(2, 4, 8, 8)))
        assert op(x).shape == (2, 4, 8, 8)

    @pytest.mark.parametrize("name", sorted(OP_FACTORIES))
    def test_stride2_halves_shape(self, name):
        op = make_op(name, 4, 4, 2, np.random.default_rng(0))
        x = ag.Tensor(RNG.normal(size=(2, 4, 8, 8)))
        assert op(x).shape == (2, 4, 4, 4)

    def test_none_is_exact_zeros(self):
        op = make_op("none", 3, 3, 1, np.random.default_rng(0))
        x = ag.Tensor(RNG.normal(size=(2, 3, 6, 6)))
        np.testing.assert_array_equal(op(x).data, np.zeros((2, 3, 6, 6)))

    def test_skip_is_identity_at_stride1(self):
        op = make_op("skip_connect", 3, 3, 1, np.random.default_rng(0))
        x = ag.Tensor(RNG.normal(size=(2, 3, 6, 6)))
        assert op(x) is x

    def test_unknown_name_raises(self):
        with pytest.raises(CatalogError):
            make_op("conv7x7", 3, 3, 1, np.random.default_rng(0))


class TestCosts:
    def test_skip_costs_nothing(self):
        assert op_cost("skip_connect", (16, 8, 8)) == {"params": 0, "mult_adds": 0}

    def test_avg_pool_costs_nothing(self):
        assert op_cost("avg_pool3x3", (16, 8, 8))["params"] == 0

    def test_conv3x3_hand_count(self):
        cost = op_cost("conv3x3", (16, 8, 8))
        assert cost["params"] == 16 * 16 * 9
        assert cost["mult_adds"] == 16 * 16 * 9 * 8 * 8

    @pytest.mark.parametrize("name", ["conv1x1", "conv3x3", "sep_conv3x3",
                                      "sep_conv5x5", "dil_conv3x3",
                                      "dil_conv5x5"])
    def test_formula_matches_parameter_enumeration(self, name):
        op = make_op(name, 16, 16, 1, np.random.default_rng(0))
        enumerated = sum(p.size for p in op.params())
        assert op_cost(name, (16, 8, 8))["params"] == enumerated

    def test_genotype_cost_sums_ops(self):
        g = Genotype(space="reduced",
                     normal=((0, 1, "conv3x3"), (0, 2, "skip_connect"),
                             (1, 2, "avg_pool3x3")))
        total = count_cost(g, (8, 8, 8))
        assert total["params"] == op_cost("conv3x3", (8, 8, 8))["params"]


class TestTopologies:
    def test_darts_cell_counts(self):
        topo = space_topologies("darts")["normal"]
        assert topo.num_nodes == 6 and topo.input_nodes == 2
        assert topo.num_edges == 14 and topo.num_ops == 8
        # 14 edges x 8 ops = 112 alpha entries per cell type
        arch = init_arch_params({"kind": "small-random"},
                                space_topologies("darts"), seed=0)
        assert arch.alpha["normal"].size == 112
        assert arch.alpha["reduce"].size == 112

    def test_nb201_cell_counts(self):
        topo = space_topologies("nb201")["normal"]
        assert (topo.num_nodes, topo.num_edges, topo.num_ops) == (4, 6, 5)
        arch = init_arch_params({"kind": "small-random"},
                                space_topologies("nb201"), seed=0)
        assert arch.alpha["normal"].size == 30

    def test_reduced_space_three_ops_per_edge(self):
        topo = space_topologies("reduced")["normal"]
        assert topo.candidates == ("avg_pool3x3", "conv3x3", "skip_connect")
        assert topo.num_edges == 6

    def test_micro_space(self):
        topo = space_topologies("micro")["normal"]
        assert topo.num_edges == 3
        assert set(topo.fixed_edges.values()) == {"skip_connect"}

    def test_edges_are_forward(self):
        for space in ("darts", "nb201", "reduced", "micro"):
            for topo in space_topologies(space).values():
                for i, j in topo.edges:
                    assert i < j


class TestGenotype:
    def test_json_roundtrip(self, tmp_path):
        g = derive_fixture_genotype()
        path = tmp_path / "genotype.json"
        g.save(path)
        loaded = Genotype.load(path)
        assert loaded == g
        doc = json.loads(path.read_text())
        assert set(doc) == {"space", "normal", "reduce"}

    def test_enumerate_micro_is_27_distinct(self):
        genotypes = enumerate_genotypes("micro")
        assert len(genotypes) == 27
        assert len({g.canonical() for g in genotypes}) == 27

    def test_darts_genotype_needs_two_edges_per_node(self):
        topos = space_topologies("darts")
        bad = Genotype(space="darts",
                       normal=tuple((i, 2, "conv3x3") for i in range(2)),
                       reduce=())
        with pytest.raises(ContractError):
            validate_genotype(bad, topos)


def derive_fixture_genotype() -> Genotype:
    return Genotype(space="reduced",
                    normal=((0, 1, "conv3x3"), (0, 2, "skip_connect"),
                            (1, 2, "avg_pool3x3"), (0, 3, "conv3x3"),
                            (1, 3, "skip_connect"), (2, 3, "conv3x3")))


class TestSupernet:
    def test_build_deterministic(self):
        stack = StackSpec(cells=1, channels=8, image_hw=(8, 8), classes=2)
        a = build_supernet("reduced", stack, seed=5)
        b = build_supernet("reduced", stack, seed=5)
        for pa, pb in zip(a.parameters(), b.parameters()):
            np.testing.assert_array_equal(pa.data, pb.data)
        np.testing.assert_array_equal(a.arch.alpha["normal"].data,
                                      b.arch.alpha["normal"].data)

    def test_forward_deterministic(self):
        stack = StackSpec(cells=1, channels=8, image_hw=(8, 8), classes=2)
        net = build_supernet("reduced", stack, seed=5)
        x = RNG.normal(size=(4, 1, 8, 8))
        with ag.no_grad():
            a = net.forward(x).data
            b = net.forward(x).data
        np.testing.assert_array_equal(a, b)

    def test_darts_bi_chain_forward_shape(self):
        stack = StackSpec(cells=3, channels=4, reductions=(1,),
                          image_hw=(8, 8), classes=3)
        net = build_supernet("darts", stack, seed=0)
        with ag.no_grad():
            out = net.forward(RNG.normal(size=(2, 1, 8, 8)))
        assert out.shape == (2, 3)

    def test_discrete_matches_supernet_shape(self):
        stack = StackSpec(cells=1, channels=8, image_hw=(8, 8), classes=2)
        net = build_supernet("reduced", stack, seed=5)
        child = instantiate_discrete(derive_fixture_genotype(), stack, seed=5)
        x = RNG.normal(size=(4, 1, 8, 8))
        with ag.no_grad():
            assert child.forward(x).shape == net.forward(x).shape

    def test_discrete_has_fewer_params(self):
        stack = StackSpec(cells=1, channels=8, image_hw=(8, 8), classes=2)
        net = build_supernet("reduced", stack, seed=5)
        child = instantiate_discrete(derive_fixture_genotype(), stack, seed=5)
        assert (sum(p.size for p in child.parameters())
                < sum(p.size for p in net.parameters()))

    def test_all_skip_genotype_has_no_cell_params(self):
        stack = StackSpec(cells=1, channels=8, image_hw=(8, 8), classes=2)
        g = Genotype(space="reduced",
                     normal=tuple((i, j, "skip_connect")
                                  for i, j in space_topologies("reduced")
                                  ["normal"].edges))
        child = instantiate_discrete(g, stack, seed=5)
        stem_head = (sum(p.size for p in child.stem.params())
                     + sum(p.size for p in child.head.params()))
        assert sum(p.size for p in child.parameters()) == stem_head

    def test_one_hot_alpha_matches_inherited_child_logits(self):
        stack = StackSpec(cells=1, channels=8, image_hw=(8, 8), classes=2)
        net = build_supernet("reduced", stack, seed=5)
        topo = net.topologies["normal"]
        hot = {"avg_pool3x3": 0, "conv3x3": 1, "skip_connect": 2}
        choices = ["conv3x3", "skip_connect", "avg_pool3x3",
                   "conv3x3", "conv3x3", "skip_connect"]
        table = np.full((6, 3), -20.0)
        for k, name in enumerate(choices):
            table[k, hot[name]] = 20.0
        net.arch.alpha["normal"].data[...] = table
        genotype = Genotype(space="reduced",
                            normal=tuple((i, j, choices[k]) for k, (i, j)
                                         in enumerate(topo.edges)))
        child = child_with_inherited_weights(net, genotype)
        x = RNG.normal(size=(4, 1, 8, 8))
        with ag.no_grad():
            sup = net.forward(x).data
            chl = child.forward(x).data
        assert np.abs(sup - chl).max() / np.abs(chl).max() < 1e-6

    def test_reductions_rejected_for_single_input_cells(self):
        stack = StackSpec(cells=2, channels=8, reductions=(1,),
                          image_hw=(8, 8), classes=2)
        with pytest.raises(ContractError):
            build_supernet("reduced", stack, seed=0)


class TestArchInit:
    def test_constant_offset_on_skip(self):
        topos = space_topologies("nb201")
        arch = init_arch_params({"kind": "constant-offset", "op": "skip_connect",
                                 "delta": 0.1}, topos, seed=0)
        table = arch.alpha["normal"].data
        skip_col = topos["normal"].candidates.index("skip_connect")
        row = table[0]
        assert row[skip_col] == 0.1
        assert sorted(row) == [0.0, 0.0, 0.0, 0.0, 0.1]

    def test_constant_negative(self):
        arch = init_arch_params({"kind": "constant-negative", "value": -2.0},
                                space_topologies("reduced"), seed=0)
        np.testing.assert_array_equal(arch.alpha["normal"].data,
                                      np.full((6, 3), -2.0))

    def test_small_random_bounded_and_reproducible(self):
        topos = space_topologies("reduced")
        a = init_arch_params({"kind": "small-random"}, topos, seed=3)
        b = init_arch_params({"kind": "small-random"}, topos, seed=3)
        np.testing.assert_array_equal(a.alpha["normal"].data,
                                      b.alpha["normal"].data)
        assert np.abs(a.alpha["normal"].data).max() <= 1e-3

    def test_unknown_op_raises_catalog_error(self):
        with pytest.raises(CatalogError):
            init_arch_params({"kind": "constant-offset", "op": "conv9x9",
                              "delta": 0.1}, space_topologies("nb201"), seed=0)
