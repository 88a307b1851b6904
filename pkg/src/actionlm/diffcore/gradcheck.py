"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Tensor, backward


class NonFiniteError(ArithmeticError):
    """The checked function produced a non-finite value."""


def grad_check(f: Callable[[Tensor], Tensor], point, step: float = 1e-5) -> float:
    """Return ``max |analytic - numeric| / max(1, |numeric|)`` over all coordinates.

    ``f`` builds a scalar graph from a single leaf tensor. The numeric
    derivative is the central difference with spacing ``step``.
    """
    x0 = np.array(point, dtype=np.float64)
    leaf = Tensor(x0.copy(), requires_grad=True)
    out = f(leaf)
    if not np.all(np.isfinite(out.data)):
        raise NonFiniteError(f"non-finite forward value {out.data!r} at the check point")
    backward(out)
    analytic = np.zeros_like(x0) if leaf.grad is None else leaf.grad

    numeric = np.empty_like(x0)
    flat = numeric.reshape(-1)
    for i in range(x0.size):
        xp = x0.copy().reshape(-1)
        xm = x0.copy().reshape(-1)
        xp[i] += step
        xm[i] -= step
        fp = f(Tensor(xp.reshape(x0.shape))).data
        fm = f(Tensor(xm.reshape(x0.shape))).data
        if not (np.all(np.isfinite(fp)) and np.all(np.isfinite(fm))):
            raise NonFiniteError(f"non-finite value while perturbing coordinate {i}")
        flat[i] = (float(fp) - float(fm)) / (2.0 * step)
    err = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))
    return float(err.max()) if err.size else 0.0
