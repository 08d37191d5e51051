"""Shared test oracles, independent of the package internals."""
from __future__ import annotations

import numpy as np

from ldon.autodiff import Tape


def numeric_grad(f, arrays, h: float = 1e-5):
    """Central finite differences of a scalar callable w.r.t. each array.

    Arrays are perturbed in place and restored; f takes no arguments and
    reads the arrays by reference.
    """
    grads = []
    for arr in arrays:
        flat = arr.ravel()
        g = np.zeros(flat.size)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f()
            flat[i] = orig - h
            fm = f()
            flat[i] = orig
            g[i] = (fp - fm) / (2.0 * h)
        grads.append(g.reshape(arr.shape))
    return grads


def max_rel_error(analytic, numeric, floor: float = 1e-8) -> float:
    """Max elementwise relative error, skipping entries below the floor."""
    worst = 0.0
    for a, n in zip(analytic, numeric):
        scale = np.abs(a) + np.abs(n)
        mask = scale >= floor
        if mask.any():
            worst = max(worst, float(np.max(np.abs(a - n)[mask] / scale[mask])))
    return worst


def gradcheck(loss_fn, params, h: float = 1e-5, floor: float = 1e-8) -> float:
    """Compare tape gradients of loss_fn() against central differences.

    loss_fn must rebuild the forward pass from the current parameter data on
    each call. Returns the max relative error across all parameters.
    """
    tape = Tape()
    for p in params:
        tape.watch(p)
    loss = loss_fn()
    grads = tape.backward(loss)
    analytic = [grads[p.node.nid].data.copy() for p in params]
    for p in params:
        p.node = None

    def f():
        return float(loss_fn().data)

    numeric = numeric_grad(f, [p.data for p in params], h)
    return max_rel_error(analytic, numeric, floor)
