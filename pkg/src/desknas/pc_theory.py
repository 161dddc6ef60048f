"""Expectation identities for partial-channel mixing on a linear unit.

Model: squared error E = 1/2 (t - sum_l sum_n beta_l w_{l,n} s_n x_n)^2 with
independent Bernoulli(p_n) channel masks s_n.  Averaging the stochastic
gradients over the masks equals the gradient of the ensemble model (inputs
scaled by p_n) plus a variance correction:

    E[dE/dw_{l,n}]    = dE_ens/dw_{l,n}
                        + sum_z w_{z,n} beta_l beta_z p_n (1-p_n) x_n^2
    E[dE/dalpha_l]    = dE_ens/dalpha_l
                        + sum_z sum_n beta_z w_{z,n} w_{l,n} p_n (1-p_n) x_n^2

where the alpha derivative is taken with respect to the l-th mixing
coefficient directly.  ``mc_gradients`` estimates the left-hand sides by
sampling masks; ``analytic_gradients`` evaluates the right-hand sides.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError


def _validate(w, beta, p, x):
    w = np.asarray(w, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if w.ndim != 2:
        raise ContractError("w must be (L, N)")
    L, N = w.shape
    if beta.shape != (L,) or p.shape != (N,) or x.shape != (N,):
        raise ContractError(
            f"shape mismatch: w {w.shape}, beta {beta.shape}, p {p.shape}, x {x.shape}")
    if np.any(p < 0) or np.any(p > 1):
        raise ContractError("mask probabilities must lie in [0, 1]")
    return w, beta, p, x


def ensemble_gradients(w, beta, p, x, t):
    """Gradients of the ensemble error (channels scaled by p)."""
    w, beta, p, x = _validate(w, beta, p, x)
    u = float(beta @ w @ (p * x))
    r = float(t) - u
    gw = -r * np.outer(beta, p * x)
    ga = -r * (w @ (p * x))
    return gw, ga


def analytic_gradients(w, beta, p, x, t):
    """Expected stochastic gradients: ensemble part plus variance correction."""
    w, beta, p, x = _validate(w, beta, p, x)
    gw_ens, ga_ens = ensemble_gradients(w, beta, p, x, t)
    var_term = p * (1.0 - p) * x * x                       # (N,)
    col = w.T @ beta                                       # sum_z w_{z,n} beta_z
    gw = gw_ens + np.outer(beta, col * var_term)
    ga = ga_ens + w @ (col * var_term)
    return gw, ga


def mc_gradients(w, beta, p, x, t, n_samples: int, rng: np.random.Generator):
    """Monte-Carlo means and standard errors of the stochastic gradients."""
    w, beta, p, x = _validate(w, beta, p, x)
    if n_samples < 2:
        raise ContractError("need at least 2 mask samples")
    L, N = w.shape
    masks = rng.random((n_samples, N)) < p                 # (M, N)
    sx = masks * x                                         # (M, N)
    u = sx @ (w.T @ beta)                                  # (M,)
    r = float(t) - u

    # dE/dw_{l,n} sample = -r * beta_l * s_n x_n
    base_w = -(r[:, None] * sx)                            # (M, N)
    gw_mean = np.outer(beta, base_w.mean(axis=0))
    gw_se = np.outer(np.abs(beta), base_w.std(axis=0, ddof=1) / np.sqrt(n_samples))

    # dE/dalpha_l sample = -r * sum_n w_{l,n} s_n x_n
    proj = sx @ w.T                                        # (M, L)
    base_a = -(r[:, None] * proj)
    ga_mean = base_a.mean(axis=0)
    ga_se = base_a.std(axis=0, ddof=1) / np.sqrt(n_samples)
    return gw_mean, gw_se, ga_mean, ga_se


def expectation_check(L: int = 3, N: int = 4, n_samples: int = 100_000,
                      seed: int = 0) -> dict:
    """Draw a random instance and report z-scores of MC vs analytic gradients."""
    rng = np.random.default_rng(np.random.SeedSequence((seed, 300)))
    w = rng.normal(size=(L, N))
    logits = rng.normal(size=L)
    beta = np.exp(logits - logits.max())
    beta /= beta.sum()
    p = rng.uniform(0.2, 0.8, size=N)
    x = rng.normal(size=N)
    t = float(rng.normal())

    gw_an, ga_an = analytic_gradients(w, beta, p, x, t)
    gw_mc, gw_se, ga_mc, ga_se = mc_gradients(w, beta, p, x, t, n_samples, rng)
    z_w = (gw_mc - gw_an) / np.where(gw_se > 0, gw_se, np.inf)
    z_a = (ga_mc - ga_an) / np.where(ga_se > 0, ga_se, np.inf)
    return {
        "L": L, "N": N, "n_samples": n_samples, "seed": seed,
        "w_analytic": gw_an.tolist(), "w_mc": gw_mc.tolist(),
        "w_se": gw_se.tolist(), "w_z": z_w.tolist(),
        "alpha_analytic": ga_an.tolist(), "alpha_mc": ga_mc.tolist(),
        "alpha_se": ga_se.tolist(), "alpha_z": z_a.tolist(),
        "max_abs_z": float(max(np.abs(z_w).max(), np.abs(z_a).max())),
    }
