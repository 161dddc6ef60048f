"""Continuous relaxation: beta, mixtures, partial channels, edge weights."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from desknas import autograd as ag
from desknas.errors import ContractError
from desknas.mixed import (beta_of, mixed_forward, node_aggregate,
                           partial_channel_forward)
from desknas.ops import make_op

RNG = np.random.default_rng(21)


def reduced_edge_ops(channels=4, seed=0):
    rng = np.random.default_rng(seed)
    return [(name, make_op(name, channels, channels, 1, rng))
            for name in ("avg_pool3x3", "conv3x3", "skip_connect")]


class TestBeta:
    def test_uniform(self):
        np.testing.assert_allclose(beta_of(np.zeros(5)), np.full(5, 0.2),
                                   atol=1e-15)

    def test_skip_offset_values(self):
        # softmax of [0, 0.1, 0, 0, 0]: offset entry ~0.216, rest ~0.196
        beta = beta_of(np.array([0.0, 0.1, 0.0, 0.0, 0.0]))
        np.testing.assert_allclose(
            beta, [0.196, 0.216, 0.196, 0.196, 0.196], atol=5e-4)

    def test_argmax_order_preserved(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            row = rng.normal(size=5)
            assert int(np.argmax(beta_of(row))) == int(np.argmax(row))

    @given(st.lists(st.floats(-40, 40), min_size=2, max_size=9))
    @settings(max_examples=150, deadline=None)
    def test_row_stochastic(self, row):
        beta = beta_of(np.array(row))
        assert abs(beta.sum() - 1.0) < 1e-12


class TestMixedForward:
    def test_saturated_softmax_is_identity(self):
        ops = reduced_edge_ops()
        alpha = np.array([-20.0, -20.0, 20.0])  # skip is last
        x = ag.Tensor(RNG.normal(size=(2, 4, 6, 6)))
        out = mixed_forward(x, ops, beta_of(alpha))
        rel = np.abs(out.data - x.data).max() / np.abs(x.data).max()
        assert rel < 1e-6

    def test_all_none_outputs_zero(self):
        rng = np.random.default_rng(0)
        ops = [("none", make_op("none", 4, 4, 1, rng)) for _ in range(3)]
        x = ag.Tensor(RNG.normal(size=(2, 4, 6, 6)))
        out = mixed_forward(x, ops, np.array([0.5, 0.3, 0.2]))
        np.testing.assert_array_equal(out.data, np.zeros_like(x.data))

    def test_manual_sum_oracle(self):
        ops = reduced_edge_ops(seed=3)
        x_np = RNG.normal(size=(2, 4, 6, 6))
        beta = np.array([0.2, 0.5, 0.3])  # avg, conv, skip
        with ag.no_grad():
            expected = sum(b * op(ag.Tensor(x_np)).data
                           for b, (_, op) in zip(beta, ops))
            got = mixed_forward(ag.Tensor(x_np), ops, beta).data
        np.testing.assert_allclose(got, expected, atol=1e-12)

    def test_differentiable_wrt_alpha_and_weights(self):
        ops = reduced_edge_ops(seed=3)
        alpha = ag.Tensor(np.array([[0.1, -0.2, 0.3]]), requires_grad=True)
        x = ag.Tensor(RNG.normal(size=(2, 4, 6, 6)))
        beta_row = ag.softmax(alpha, axis=1)
        out = mixed_forward(x, ops, beta_row)
        ag.backward(ag.tsum(ag.mul(out, out)))
        assert alpha.grad is not None and np.all(np.isfinite(alpha.grad))
        conv_w = ops[1][1].params()[0]
        assert conv_w.grad is not None

    def test_alpha_grad_nonzero_for_distinct_ops(self):
        ops = reduced_edge_ops(seed=3)
        alpha = ag.Tensor(np.array([[0.0, 0.0, 0.0]]), requires_grad=True)
        x = ag.Tensor(RNG.normal(size=(2, 4, 6, 6)))
        out = mixed_forward(x, ops, ag.softmax(alpha, axis=1))
        ag.backward(ag.tsum(ag.mul(out, out)))
        assert np.all(np.abs(alpha.grad) > 0)


class TestPartialChannels:
    def test_k1_equals_mixed_after_permutation(self):
        ops = reduced_edge_ops(seed=5, channels=8)
        x_np = RNG.normal(size=(2, 8, 6, 6))
        beta = np.array([0.2, 0.5, 0.3])
        rng = np.random.default_rng(99)
        perm = np.random.default_rng(99).permutation(8)
        with ag.no_grad():
            got = partial_channel_forward(ag.Tensor(x_np), ops, beta, 1, rng).data
            want = mixed_forward(ag.Tensor(x_np[:, perm]), ops, beta).data
        np.testing.assert_allclose(got, want, atol=1e-12)

    def test_k_equals_c_passes_all_but_one_channel(self):
        ops = reduced_edge_ops(seed=5, channels=1)
        x_np = RNG.normal(size=(2, 8, 6, 6))
        rng = np.random.default_rng(99)
        perm = np.random.default_rng(99).permutation(8)
        with ag.no_grad():
            out = partial_channel_forward(
                ag.Tensor(x_np), ops, np.array([0.2, 0.5, 0.3]), 8, rng).data
        np.testing.assert_array_equal(out[:, 1:], x_np[:, perm][:, 1:])

    def test_replay_with_recorded_permutation(self):
        ops = reduced_edge_ops(seed=5, channels=4)
        x_np = RNG.normal(size=(2, 16, 6, 6))
        beta = np.array([0.2, 0.5, 0.3])
        a = partial_channel_forward(ag.Tensor(x_np), ops, beta, 4,
                                    np.random.default_rng(123))
        b = partial_channel_forward(ag.Tensor(x_np), ops, beta, 4,
                                    np.random.default_rng(123))
        np.testing.assert_array_equal(a.data, b.data)
        perm = np.random.default_rng(123).permutation(16)
        np.testing.assert_array_equal(a.data[:, 4:], x_np[:, perm][:, 4:])

    def test_output_channel_count_preserved(self):
        for k in (1, 2, 4, 8, 16):
            ops = reduced_edge_ops(seed=5, channels=16 // k)
            x = ag.Tensor(RNG.normal(size=(2, 16, 6, 6)))
            out = partial_channel_forward(x, ops, np.array([0.2, 0.5, 0.3]), k,
                                          np.random.default_rng(0))
            assert out.shape == (2, 16, 6, 6)

    def test_nonpositive_k_rejected(self):
        ops = reduced_edge_ops()
        with pytest.raises(ContractError):
            partial_channel_forward(ag.Tensor(np.zeros((1, 4, 4, 4))), ops,
                                    np.array([1.0, 0.0, 0.0]), 0,
                                    np.random.default_rng(0))


class TestNodeAggregate:
    def test_plain_sum(self):
        x = ag.Tensor(RNG.normal(size=(2, 3, 4, 4)))
        out = node_aggregate([x, x])
        np.testing.assert_allclose(out.data, 2 * x.data, atol=1e-15)

    def test_uniform_gamma_is_mean(self):
        xs = [ag.Tensor(RNG.normal(size=(2, 3, 4, 4))) for _ in range(3)]
        out = node_aggregate(xs, np.zeros(3))
        want = sum(x.data for x in xs) / 3.0
        np.testing.assert_allclose(out.data, want, atol=1e-12)

    def test_hand_computed_gamma_weights(self):
        xs = [ag.Tensor(np.ones((1, 1, 2, 2))), ag.Tensor(np.zeros((1, 1, 2, 2)))]
        out = node_aggregate(xs, np.array([np.log(2.0), 0.0]))
        np.testing.assert_allclose(out.data, np.full((1, 1, 2, 2), 2 / 3),
                                   atol=1e-12)

    def test_gamma_tensor_is_differentiable(self):
        gamma = ag.Tensor(np.array([0.3, -0.2]), requires_grad=True)
        xs = [ag.Tensor(RNG.normal(size=(1, 2, 3, 3))) for _ in range(2)]
        out = node_aggregate(xs, gamma)
        ag.backward(ag.tsum(ag.mul(out, out)))
        assert gamma.grad is not None and np.all(np.isfinite(gamma.grad))
