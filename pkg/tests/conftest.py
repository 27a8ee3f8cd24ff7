import numpy as np

from sadm import tensor as T


def rel_error(a, b, floor=1e-6):
    """Worst-case elementwise relative error with an absolute floor.

    The floor keeps finite-difference roundoff noise (~1e-11 for unit-scale
    losses at h=1e-5) from blowing up comparisons of near-zero gradients."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    denom = np.maximum(floor, np.abs(a) + np.abs(b))
    return float(np.max(np.abs(a - b) / denom))


def numeric_grad(param: T.Value, loss_fn, h=1e-5):
    """Central finite differences of a scalar loss w.r.t. one parameter."""
    g = np.zeros_like(param.data)
    flat = param.data.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        with T.no_grad():
            up = float(loss_fn().data)
        flat[i] = old - h
        with T.no_grad():
            down = float(loss_fn().data)
        flat[i] = old
        gflat[i] = (up - down) / (2.0 * h)
    return g


def gradcheck(params: list, loss_fn, tol=1e-4, h=1e-5, floor=1e-6):
    """Compare backward() gradients against the finite-difference oracle.

    Returns the worst relative error across all parameters."""
    for p in params:
        p.zero_grad()
    loss = loss_fn()
    T.backward(loss)
    worst = 0.0
    for p in params:
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad
        numeric = numeric_grad(p, loss_fn, h=h)
        worst = max(worst, rel_error(analytic, numeric, floor=floor))
    assert worst < tol, f"gradient mismatch: relative error {worst:.3e} >= {tol}"
    return worst
