"""Central finite-difference checks for graph functions."""

from __future__ import annotations

import numpy as np

from .node import Node, backward, parameter


def numerical_gradient(f, arrays, index: int, h: float = 1e-3) -> np.ndarray:
    """Central differences of scalar ``f(*arrays)`` wrt ``arrays[index]`` in float64."""
    base = [np.asarray(a, dtype=np.float64).copy() for a in arrays]
    x = base[index]
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = float(f(*base))
        flat[i] = old - h
        fm = float(f(*base))
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * h)
    return grad


def analytic_gradients(build, arrays):
    """Gradients of ``build(*nodes)`` (a scalar node) wrt every input, in float64."""
    nodes = [parameter(np.asarray(a, dtype=np.float64)) for a in arrays]
    root = build(*nodes)
    backward(root)
    return [n.grad for n in nodes]


def relative_error(a, b) -> float:
    a = np.asarray(a, np.float64)
    b = np.asarray(b, np.float64)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def gradcheck(build, arrays, h: float = 1e-3, wrt=None) -> float:
    """Worst relative error between analytic and numerical gradients.

    ``build`` takes one :class:`Node` per array and returns a scalar node;
    it is also evaluated on plain float64 arrays for the finite differences.
    """
    arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
    analytic = analytic_gradients(build, arrays)

    def f(*vals):
        return build(*[Node(v) for v in vals]).value.item()

    worst = 0.0
    for i in (range(len(arrays)) if wrt is None else wrt):
        num = numerical_gradient(f, arrays, i, h)
        worst = max(worst, relative_error(analytic[i], num))
    return worst
