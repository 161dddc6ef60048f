"""Independent oracles shared across test modules.

These stay deliberately separate from the engine code paths they check:
the erf oracle is a Maclaurin series, gradients come from central finite
differences on the forward pass only.
"""

from __future__ import annotations

import math

import numpy as np

from desknas import autograd as ag


def erf_series(x: float, tol: float = 1e-12) -> float:
    """Maclaurin series for erf, truncated when terms drop below tol."""
    total = 0.0
    term = x
    n = 0
    while abs(term) > tol:
        total += term / (2 * n + 1)
        n += 1
        term = term * (-x * x) / n
        if n > 200:
            break
    return 2.0 / math.sqrt(math.pi) * total


def central_diff(f, args: list[np.ndarray], wrt: int, step: float = 1e-5):
    """Finite-difference gradient of scalar-valued f w.r.t. args[wrt]."""
    grad = np.zeros_like(args[wrt], dtype=np.float64)
    flat = grad.reshape(-1)
    for i in range(flat.size):
        plus = [a.copy() for a in args]
        minus = [a.copy() for a in args]
        plus[wrt].reshape(-1)[i] += step
        minus[wrt].reshape(-1)[i] -= step
        flat[i] = (f(*plus) - f(*minus)) / (2 * step)
    return grad


def autodiff_grad(build, args: list[np.ndarray], wrt: int):
    """Gradient of a tensor-graph scalar builder w.r.t. one input array."""
    tensors = [ag.Tensor(a, requires_grad=True) for a in args]
    loss = build(*tensors)
    ag.backward(loss)
    g = tensors[wrt].grad
    return np.zeros_like(args[wrt]) if g is None else g


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(np.abs(b).max(), 1e-10)
    return float(np.abs(a - b).max() / denom)


def grad_matches_fd(build, scalar_fn, args, wrt=0, tol=1e-4, step=1e-5):
    """Assert-style check: autodiff vs finite differences."""
    g_ad = autodiff_grad(build, args, wrt)
    g_fd = central_diff(scalar_fn, args, wrt, step)
    return rel_err(g_ad, g_fd), g_ad, g_fd
