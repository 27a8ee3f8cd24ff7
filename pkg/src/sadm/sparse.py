"""Sparse probability mappings: closed-form 1.5-entmax, a bisection solver
for general alpha, and the matching Tsallis entropy used as an exploration
regularizer.

The alpha-entmax family interpolates between softmax (alpha -> 1) and
sparsemax (alpha = 2); for alpha > 1 dominated entries receive exactly zero
probability.
"""

from __future__ import annotations

import numpy as np

from .tensor import Value, _make, _accum, as_value, check_masked_rows


def _entmax15_forward(z: np.ndarray, axis: int) -> np.ndarray:
    """Exact 1.5-entmax along `axis`: p_i = max(0, z_i/2 - tau)^2."""
    z = np.moveaxis(np.asarray(z, dtype=np.float64), axis, -1)
    x = (z - np.max(z, axis=-1, keepdims=True)) / 2.0

    xs = -np.sort(-x, axis=-1)  # descending
    n = xs.shape[-1]
    rho = np.arange(1, n + 1, dtype=np.float64)
    mean = np.cumsum(xs, axis=-1) / rho
    mean_sq = np.cumsum(xs * xs, axis=-1) / rho
    ss = rho * (mean_sq - mean * mean)
    delta = np.maximum((1.0 - ss) / rho, 0.0)
    tau = mean - np.sqrt(delta)

    # support size: positions where the sorted entry still clears its threshold
    k = np.sum(tau <= xs, axis=-1, keepdims=True)
    tau_star = np.take_along_axis(tau, k - 1, axis=-1)
    p = np.square(np.maximum(x - tau_star, 0.0))
    return np.moveaxis(p, -1, axis)


def entmax15(z, axis: int = -1) -> Value:
    """Differentiable 1.5-entmax; masked (sentinel) positions map to exact 0.

    Raises InfeasibleActionError when a whole row is masked.
    """
    z = as_value(z)
    check_masked_rows(z.data, axis)
    p = _entmax15_forward(z.data, axis)
    out = _make(p, (z,), None)
    s = np.sqrt(p)

    def bw(g):
        gs = g * s
        q = gs.sum(axis=axis, keepdims=True) / s.sum(axis=axis, keepdims=True)
        _accum(z, gs - q * s)

    out._backward = bw if out.requires_grad else None
    return out


def entmax_bisect(z, alpha: float, iters: int = 60) -> np.ndarray:
    """Forward-only alpha-entmax via bisection on the threshold.

    Solves sum_i max(0, (alpha-1) z_i - tau)^(1/(alpha-1)) = 1 with the root
    bracketed in [max((alpha-1) z) - 1, max((alpha-1) z)]. Used as the oracle
    for the closed forms; no gradient.
    """
    if alpha <= 1.0:
        raise ValueError(f"entmax_bisect requires alpha > 1, got {alpha}")
    if iters < 1:
        raise ValueError(f"entmax_bisect requires iters >= 1, got {iters}")
    z = np.asarray(z, dtype=np.float64)
    zs = (alpha - 1.0) * z
    hi = zs.max(axis=-1, keepdims=True)
    lo = hi - 1.0
    expo = 1.0 / (alpha - 1.0)
    for _ in range(iters):
        tau = 0.5 * (lo + hi)
        total = np.power(np.maximum(zs - tau, 0.0), expo).sum(axis=-1, keepdims=True)
        # sum decreases in tau: too much mass -> raise the threshold
        lo = np.where(total >= 1.0, tau, lo)
        hi = np.where(total >= 1.0, hi, tau)
    tau = 0.5 * (lo + hi)
    return np.power(np.maximum(zs - tau, 0.0), expo)


def support(p: np.ndarray, axis: int = -1) -> np.ndarray:
    """Count of strictly positive entries along `axis`."""
    return np.sum(np.asarray(p) > 0.0, axis=axis)


class SparseDist:
    """A single probability row with its support set and sparsity parameter."""

    __slots__ = ("probs", "support", "alpha")

    def __init__(self, probs: np.ndarray, alpha: float):
        self.probs = np.asarray(probs, dtype=np.float64)
        self.support = set(np.flatnonzero(self.probs > 0.0).tolist())
        self.alpha = float(alpha)

    def __len__(self):
        return len(self.probs)


def tsallis_entropy(p, alpha: float, axis: int = -1) -> Value:
    """Generalized entropy matched to alpha-entmax outputs.

    alpha != 1: H_a(p) = (sum_j p_j - p_j^alpha) / (alpha (alpha - 1));
    alpha == 1: Shannon entropy. Zero entries contribute 0 with a finite
    (guarded) gradient, so masked actions never poison the backward pass.
    For 1-D input the result is a scalar, otherwise one entropy per row.
    """
    p = as_value(p)
    pd = p.data
    if alpha == 1.0:
        plogp = np.where(pd > 0.0, pd * np.log(np.maximum(pd, 1e-300)), 0.0)
        h = -plogp.sum(axis=axis)
        out = _make(np.asarray(h), (p,), None)

        def bw(g):
            g = np.expand_dims(g, axis)
            dh = np.where(pd > 0.0, -(np.log(np.maximum(pd, 1e-300)) + 1.0), 0.0)
            _accum(p, g * dh)

    else:
        coeff = 1.0 / (alpha * (alpha - 1.0))
        h = coeff * (pd - np.power(pd, alpha)).sum(axis=axis)
        out = _make(np.asarray(h), (p,), None)

        def bw(g):
            g = np.expand_dims(g, axis)
            dh = coeff * (1.0 - alpha * np.power(pd, alpha - 1.0))
            _accum(p, g * dh)

    out._backward = bw if out.requires_grad else None
    return out
