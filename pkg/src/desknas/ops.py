"""Candidate operation catalog.

Every operation maps (in_channels, out_channels, stride) to a small chain of
primitives.  Stride-1 ops preserve spatial shape via padding; stride-2 ops
produce ceil(H/2) x ceil(W/2).  Convolutions are bias-free and use a plain
ReLU-Conv chain (no normalization); separable and dilated convolutions are a
single depthwise+pointwise application.
"""

from __future__ import annotations

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import CatalogError, DimensionError


def _kaiming_uniform(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    bound = np.sqrt(6.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


class Identity:
    def __init__(self, cin, cout, stride, rng=None):
        if cin != cout:
            raise DimensionError(f"skip_connect: {cin} -> {cout} channels unsupported")
        self.stride = stride

    def __call__(self, x: Tensor) -> Tensor:
        if self.stride == 1:
            return x
        h, w = x.shape[2], x.shape[3]
        x = ag.gather(x, np.arange(0, h, self.stride), axis=2)
        return ag.gather(x, np.arange(0, w, self.stride), axis=3)

    def params(self):
        return []


class Zero:
    def __init__(self, cin, cout, stride, rng=None):
        self.cout = cout
        self.stride = stride

    def __call__(self, x: Tensor) -> Tensor:
        n, _, h, w = x.shape
        ho = -(-h // self.stride)
        wo = -(-w // self.stride)
        return Tensor(np.zeros((n, self.cout, ho, wo)))

    def params(self):
        return []


class ReluConv:
    def __init__(self, cin, cout, kernel, stride, rng, dilation=1, relu=True):
        self.stride = stride
        self.dilation = dilation
        self.padding = dilation * (kernel - 1) // 2
        self.relu = relu
        self.w = _kaiming_uniform(rng, (cout, cin, kernel, kernel), cin * kernel * kernel)

    def __call__(self, x: Tensor) -> Tensor:
        h = ag.relu(x) if self.relu else x
        return ag.conv2d(h, self.w, stride=self.stride, padding=self.padding,
                         dilation=self.dilation)

    def params(self):
        return [self.w]


class SepConv:
    """ReLU -> depthwise kxk -> pointwise 1x1 (optionally dilated)."""

    def __init__(self, cin, cout, kernel, stride, rng, dilation=1):
        self.stride = stride
        self.dilation = dilation
        self.padding = dilation * (kernel - 1) // 2
        self.w_depth = _kaiming_uniform(rng, (cin, 1, kernel, kernel), kernel * kernel)
        self.w_point = _kaiming_uniform(rng, (cout, cin, 1, 1), cin)
        self.cin = cin

    def __call__(self, x: Tensor) -> Tensor:
        h = ag.relu(x)
        h = ag.conv2d(h, self.w_depth, stride=self.stride, padding=self.padding,
                      dilation=self.dilation, groups=self.cin)
        return ag.conv2d(h, self.w_point)

    def params(self):
        return [self.w_depth, self.w_point]


class AvgPool:
    def __init__(self, cin, cout, stride, rng=None):
        self.stride = stride

    def __call__(self, x: Tensor) -> Tensor:
        return ag.avg_pool2d(x, kernel=3, stride=self.stride, padding=1)

    def params(self):
        return []


class MaxPool:
    def __init__(self, cin, cout, stride, rng=None):
        self.stride = stride

    def __call__(self, x: Tensor) -> Tensor:
        return ag.max_pool2d(x, kernel=3, stride=self.stride, padding=1)

    def params(self):
        return []


OP_FACTORIES = {
    "none": Zero,
    "skip_connect": Identity,
    "avg_pool3x3": AvgPool,
    "max_pool3x3": MaxPool,
    "conv1x1": lambda cin, cout, stride, rng: ReluConv(cin, cout, 1, stride, rng),
    "conv3x3": lambda cin, cout, stride, rng: ReluConv(cin, cout, 3, stride, rng),
    "sep_conv3x3": lambda cin, cout, stride, rng: SepConv(cin, cout, 3, stride, rng),
    "sep_conv5x5": lambda cin, cout, stride, rng: SepConv(cin, cout, 5, stride, rng),
    "dil_conv3x3": lambda cin, cout, stride, rng: SepConv(cin, cout, 3, stride, rng,
                                                          dilation=2),
    "dil_conv5x5": lambda cin, cout, stride, rng: SepConv(cin, cout, 5, stride, rng,
                                                          dilation=2),
}


def make_op(name: str, cin: int, cout: int, stride: int, rng: np.random.Generator):
    try:
        factory = OP_FACTORIES[name]
    except KeyError:
        raise CatalogError(f"unknown operation {name!r}; known: {sorted(OP_FACTORIES)}")
    return factory(cin, cout, stride, rng)


def op_cost(name: str, input_shape, stride: int = 1) -> dict:
    """Analytic {params, mult_adds} for one op at the given (C, H, W) input.

    Parameter-free ops (pool/skip/none) cost 0 on both axes.
    """
    if name not in OP_FACTORIES:
        raise CatalogError(f"unknown operation {name!r}; known: {sorted(OP_FACTORIES)}")
    c, h, w = input_shape
    ho = -(-h // stride)
    wo = -(-w // stride)
    if name in ("none", "skip_connect", "avg_pool3x3", "max_pool3x3"):
        return {"params": 0, "mult_adds": 0}
    if name == "conv1x1":
        params = c * c
    elif name == "conv3x3":
        params = c * c * 9
    elif name in ("sep_conv3x3", "dil_conv3x3"):
        params = c * 9 + c * c
    elif name in ("sep_conv5x5", "dil_conv5x5"):
        params = c * 25 + c * c
    else:  # pragma: no cover - exhaustive above
        raise CatalogError(name)
    return {"params": params, "mult_adds": params * ho * wo}
