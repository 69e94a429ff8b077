"""Central finite-difference oracle, independent of the autodiff engine.

`finite_diff` numerically differentiates an arbitrary scalar-valued function
of numpy arrays; `check_gradients` compares that against the analytic
gradients produced by backward().
"""

import numpy as np

from ude.numerics import Tensor


def finite_diff(fn, arrays, h=1e-5):
    """Numeric gradients of fn(*arrays) -> float w.r.t. every array."""
    grads = []
    for i, base in enumerate(arrays):
        g = np.zeros_like(base)
        flat = g.reshape(-1)
        for j in range(base.size):
            bumped = [a.copy() for a in arrays]
            bumped[i].reshape(-1)[j] += h
            hi = fn(*bumped)
            bumped[i].reshape(-1)[j] -= 2 * h
            lo = fn(*bumped)
            flat[j] = (hi - lo) / (2 * h)
        grads.append(g)
    return grads


def check_gradients(build, arrays, h=1e-5, rtol=1e-4):
    """Assert analytic gradients match central differences.

    `build` maps a list of Tensors to a scalar Tensor. Returns the worst
    relative error seen, for reporting.
    """
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    loss = build(*tensors)
    loss.backward()

    def as_scalar(*raw):
        return build(*[Tensor(r) for r in raw]).item()

    numeric = finite_diff(as_scalar, [a.copy() for a in arrays], h=h)
    worst = 0.0
    for t, n in zip(tensors, numeric):
        scale = max(np.abs(n).max(), np.abs(t.grad).max(), 1e-8)
        err = np.abs(t.grad - n).max() / scale
        worst = max(worst, err)
        assert err < rtol, f"gradient mismatch: rel err {err:.3e}"
    return worst
