"""Tensor core: primitives, the tape, and the error-function kernel."""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from desknas import autograd as ag
from desknas.errors import ContractError, DimensionError

from helpers import autodiff_grad, central_diff, erf_series, rel_err

RNG = np.random.default_rng(1234)


def scalarize(fn):
    """Wrap an op into sum-of-squares scalar builders for grad checks."""

    def build(*tensors):
        out = fn(*tensors)
        return ag.tsum(ag.mul(out, out))

    def forward(*arrays):
        with ag.no_grad():
            out = fn(*[ag.Tensor(a) for a in arrays])
        return float((out.data ** 2).sum())

    return build, forward


PRIMITIVE_CASES = [
    ("add", lambda a, b: ag.add(a, b),
     lambda: [RNG.normal(size=(3, 4)), RNG.normal(size=(3, 4))], [0, 1]),
    ("add_broadcast", lambda a, b: ag.add(a, b),
     lambda: [RNG.normal(size=(3, 4)), RNG.normal(size=(1, 4))], [0, 1]),
    ("mul", lambda a, b: ag.mul(a, b),
     lambda: [RNG.normal(size=(3, 4)), RNG.normal(size=(3, 4))], [0, 1]),
    ("mul_broadcast", lambda a, b: ag.mul(a, b),
     lambda: [RNG.normal(size=(1, 1)), RNG.normal(size=(2, 3, 4, 4))], [0, 1]),
    ("neg", lambda a: ag.neg(a), lambda: [RNG.normal(size=(5,))], [0]),
    ("matmul", lambda a, b: ag.matmul(a, b),
     lambda: [RNG.normal(size=(3, 4)), RNG.normal(size=(4, 2))], [0, 1]),
    ("relu", lambda a: ag.relu(a),
     lambda: [_away_from(RNG.normal(size=(4, 5)), 0.0)], [0]),
    ("exp", lambda a: ag.exp(a), lambda: [RNG.normal(size=(4, 5))], [0]),
    ("log", lambda a: ag.log(a),
     lambda: [RNG.uniform(0.2, 3.0, size=(4, 5))], [0]),
    ("erf", lambda a: ag.erf(a), lambda: [RNG.normal(size=(8,))], [0]),
    ("sum_all", lambda a: ag.tsum(a), lambda: [RNG.normal(size=(3, 4))], [0]),
    ("sum_axis", lambda a: ag.tsum(a, axis=1),
     lambda: [RNG.normal(size=(3, 4, 2))], [0]),
    ("mean_axes", lambda a: ag.tmean(a, axis=(2, 3)),
     lambda: [RNG.normal(size=(2, 3, 4, 4))], [0]),
    ("softmax", lambda a: ag.softmax(a, axis=1),
     lambda: [RNG.normal(size=(4, 5))], [0]),
    ("logsumexp", lambda a: ag.logsumexp(a, axis=1),
     lambda: [RNG.normal(size=(4, 5))], [0]),
    ("conv2d", lambda a, b: ag.conv2d(a, b, stride=1, padding=1),
     lambda: [RNG.normal(size=(2, 3, 5, 5)), RNG.normal(size=(4, 3, 3, 3)) * 0.4],
     [0, 1]),
    ("conv2d_stride2", lambda a, b: ag.conv2d(a, b, stride=2, padding=1),
     lambda: [RNG.normal(size=(2, 3, 6, 6)), RNG.normal(size=(4, 3, 3, 3)) * 0.4],
     [0, 1]),
    ("conv2d_dilated_depthwise",
     lambda a, b: ag.conv2d(a, b, padding=2, dilation=2, groups=3),
     lambda: [RNG.normal(size=(2, 3, 6, 6)), RNG.normal(size=(3, 1, 3, 3)) * 0.4],
     [0, 1]),
    ("conv1x1", lambda a, b: ag.conv2d(a, b),
     lambda: [RNG.normal(size=(2, 3, 4, 4)), RNG.normal(size=(5, 3, 1, 1)) * 0.4],
     [0, 1]),
    ("avg_pool", lambda a: ag.avg_pool2d(a, kernel=3, stride=1, padding=1),
     lambda: [RNG.normal(size=(2, 3, 6, 6))], [0]),
    ("avg_pool_s2", lambda a: ag.avg_pool2d(a, kernel=3, stride=2, padding=1),
     lambda: [RNG.normal(size=(2, 3, 6, 6))], [0]),
    ("max_pool", lambda a: ag.max_pool2d(a, kernel=3, stride=1, padding=1),
     lambda: [RNG.normal(size=(2, 3, 6, 6))], [0]),
    ("concat", lambda a, b: ag.concat([a, b], axis=1),
     lambda: [RNG.normal(size=(2, 3, 4, 4)), RNG.normal(size=(2, 2, 4, 4))],
     [0, 1]),
    ("narrow", lambda a: ag.narrow(a, 1, 1, 2),
     lambda: [RNG.normal(size=(2, 4, 3, 3))], [0]),
    ("gather", lambda a: ag.gather(a, np.array([1, 0, 2, 1]), axis=1),
     lambda: [RNG.normal(size=(2, 3, 4, 4))], [0]),
    ("reshape", lambda a: ag.reshape(a, (6, 4)),
     lambda: [RNG.normal(size=(2, 3, 4))], [0]),
]


def _away_from(a, value, eps=1e-3):
    a = a.copy()
    close = np.abs(a - value) < eps
    a[close] += 2 * eps
    return a


@pytest.mark.parametrize(
    "name,fn,make,wrts", PRIMITIVE_CASES, ids=[c[0] for c in PRIMITIVE_CASES])
def test_primitive_gradients_match_finite_differences(name, fn, make, wrts):
    build, forward = scalarize(fn)
    for _ in range(3):
        args = make()
        for wrt in wrts:
            g_ad = autodiff_grad(build, args, wrt)
            g_fd = central_diff(forward, args, wrt)
            assert rel_err(g_ad, g_fd) < 1e-4, f"{name} wrt arg {wrt}"


def test_cross_entropy_gradient():
    logits = RNG.normal(size=(6, 4))
    labels = np.array([0, 1, 2, 3, 1, 0])

    def build(t):
        return ag.cross_entropy(t, labels)

    def forward(a):
        with ag.no_grad():
            return ag.cross_entropy(ag.Tensor(a), labels).item()

    g_ad = autodiff_grad(build, [logits], 0)
    g_fd = central_diff(forward, [logits], 0)
    assert rel_err(g_ad, g_fd) < 1e-6


class TestBackwardContract:
    def test_sum_backward_is_ones(self):
        x = ag.Tensor(RNG.normal(size=(3, 4, 2)), requires_grad=True)
        ag.backward(ag.tsum(x))
        np.testing.assert_array_equal(x.grad, np.ones((3, 4, 2)))

    def test_non_scalar_loss_rejected(self):
        x = ag.Tensor(RNG.normal(size=(3,)), requires_grad=True)
        y = ag.mul(x, 2.0)
        with pytest.raises(ContractError):
            ag.backward(y)
        ag.backward(ag.tsum(ag.mul(x, 2.0)))  # leave the tape clean

    def test_empty_tape_rejected(self):
        with pytest.raises(ContractError):
            ag.backward(ag.Tensor(1.0))

    def test_tape_cleared_after_backward(self):
        x = ag.Tensor(RNG.normal(size=(3,)), requires_grad=True)
        ag.backward(ag.tsum(x))
        assert ag.tape_length() == 0

    def test_no_grad_suspends_recording(self):
        x = ag.Tensor(RNG.normal(size=(3,)), requires_grad=True)
        with ag.no_grad():
            y = ag.tsum(x)
        assert ag.tape_length() == 0
        assert not y.requires_grad

    def test_grad_accumulates_across_uses(self):
        x = ag.Tensor(np.array([1.0, 2.0]), requires_grad=True)
        loss = ag.tsum(ag.add(ag.mul(x, 3.0), ag.mul(x, 2.0)))
        ag.backward(loss)
        np.testing.assert_allclose(x.grad, [5.0, 5.0])

    def test_intermediates_reachable_from_loss_have_grads(self):
        x = ag.Tensor(np.array([1.0, -2.0]), requires_grad=True)
        h = ag.mul(x, x)
        loss = ag.tsum(h)
        ag.backward(loss)
        assert h.grad is not None and x.grad is not None

    def test_shape_error_names_op(self):
        with pytest.raises(DimensionError, match="matmul"):
            ag.matmul(ag.Tensor(np.zeros((2, 3))), ag.Tensor(np.zeros((2, 3))))
        with pytest.raises(DimensionError, match="cross_entropy"):
            ag.cross_entropy(ag.Tensor(np.zeros((2, 3))), np.array([0]))


class TestSoftmax:
    def test_uniform_logits(self):
        out = ag.softmax(ag.Tensor([0.0, 0.0, 0.0]), axis=0)
        np.testing.assert_allclose(out.data, [1 / 3] * 3, atol=1e-15)

    @given(st.lists(st.floats(-30, 30), min_size=2, max_size=8))
    @settings(max_examples=100, deadline=None)
    def test_probability_vector(self, row):
        out = ag.softmax(ag.Tensor(row), axis=0).data
        assert np.all(out > 0) and np.all(out < 1.0 + 1e-12)
        assert abs(out.sum() - 1.0) < 1e-12


class TestErf:
    def test_zero(self):
        assert ag.erf_forward(0.0) == 0.0
        assert abs(ag.erf_backward(0.0) - 2 / math.sqrt(math.pi)) < 1e-15

    def test_odd_symmetry(self):
        xs = np.linspace(-5, 5, 401)
        np.testing.assert_array_equal(ag.erf_forward(-xs), -ag.erf_forward(xs))

    def test_against_series_oracle(self):
        # series values frozen from the independent Maclaurin oracle
        assert abs(erf_series(1.0) - 0.8427007929497149) < 1e-12
        assert abs(erf_series(0.5) - 0.5204998778130465) < 1e-12
        for x in (0.1, 0.5, 1.0, 1.7, 2.5, -0.75, -1.3):
            assert abs(ag.erf_forward(x) - erf_series(x)) < 1.5e-7

    def test_derivative_closed_form(self):
        want = 2 / math.sqrt(math.pi) * math.exp(-0.25)
        assert abs(ag.erf_backward(0.5) - want) < 1e-12

    def test_asymptote(self):
        for x in (6.0, 8.0, 20.0):
            assert abs(ag.erf_forward(x) - 1.0) < 1e-7
            assert abs(ag.erf_forward(-x) + 1.0) < 1e-7

    @given(st.floats(-6, 6), st.floats(-6, 6))
    @settings(max_examples=200, deadline=None)
    def test_monotone(self, a, b):
        lo, hi = min(a, b), max(a, b)
        assert ag.erf_forward(lo) <= ag.erf_forward(hi)


class TestConvolution:
    def test_identity_kernel_reproduces_input(self):
        x = RNG.normal(size=(2, 3, 6, 6))
        w = np.zeros((3, 3, 3, 3))
        for c in range(3):
            w[c, c, 1, 1] = 1.0
        out = ag.conv2d(ag.Tensor(x), ag.Tensor(w), stride=1, padding=1)
        np.testing.assert_array_equal(out.data, x)

    def test_channel_mismatch_names_axis(self):
        with pytest.raises(DimensionError, match="conv2d"):
            ag.conv2d(ag.Tensor(np.zeros((1, 3, 4, 4))),
                      ag.Tensor(np.zeros((2, 4, 3, 3))))

    def test_stride2_shapes(self):
        x = ag.Tensor(np.zeros((1, 2, 8, 8)))
        w = ag.Tensor(np.zeros((2, 2, 3, 3)))
        assert ag.conv2d(x, w, stride=2, padding=1).shape == (1, 2, 4, 4)

    def test_avg_pool_counts_padding(self):
        x = ag.Tensor(np.ones((1, 1, 3, 3)))
        out = ag.avg_pool2d(x, kernel=3, stride=1, padding=1)
        # corner window sees 4 ones out of 9 cells
        assert abs(out.data[0, 0, 0, 0] - 4 / 9) < 1e-15

    def test_max_pool_ignores_padding(self):
        x = ag.Tensor(-np.ones((1, 1, 3, 3)))
        out = ag.max_pool2d(x, kernel=3, stride=1, padding=1)
        np.testing.assert_array_equal(out.data, -np.ones((1, 1, 3, 3)))
