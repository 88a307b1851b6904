"""Differentiable primitives over :class:`Tensor`.

Each function computes its forward value with numpy and registers a backward
rule returning one gradient per parent (``None`` where no gradient flows).
Binary elementwise ops broadcast like numpy; their backward rules sum the
gradient back down to each operand's shape.
"""

from __future__ import annotations

import numpy as np

from .tensor import DTYPE, ContractViolation, Tensor, as_tensor, make_result

# Floor used where a backward rule divides by a quantity that vanishes on a
# measure-zero set (norm at the origin, arccosh at 1). The matching numerator
# vanishes there too, so the floor only prevents 0 * inf.
_TINY = 1e-300


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ContractViolation(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# ---------------------------------------------------------------------------
# arithmetic
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_result(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return make_result(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)

    def bw(g):
        return (
            _unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
            _unbroadcast(g * a.data, b.shape) if b.requires_grad else None,
        )

    return make_result(a.data * b.data, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("div", a, b)
    out = a.data / b.data

    def bw(g):
        return (
            _unbroadcast(g / b.data, a.shape) if a.requires_grad else None,
            _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None,
        )

    return make_result(out, (a, b), bw, "div")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return make_result(-a.data, (a,), lambda g: (-g,), "neg")


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    p = float(exponent)

    def bw(g):
        return (g * p * a.data ** (p - 1.0),)

    return make_result(a.data ** p, (a,), bw, "pow")


def matmul(a, b) -> Tensor:
    """Batched matrix product with numpy broadcasting over leading dims."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ContractViolation(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out = a.data @ b.data

    def bw(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        if b.requires_grad:
            if b.ndim == 2:
                gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return make_result(out, (a, b), bw, "matmul")


# ---------------------------------------------------------------------------
# elementwise nonlinearities
# ---------------------------------------------------------------------------

def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return make_result(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


def tanh(x) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.data)
    return make_result(out, (x,), lambda g: (g * (1.0 - out * out),), "tanh")


def arctanh(x) -> Tensor:
    x = as_tensor(x)
    if np.any(np.abs(x.data) >= 1.0):
        raise ContractViolation("arctanh: input outside (-1, 1)")
    return make_result(np.arctanh(x.data), (x,), lambda g: (g / (1.0 - x.data * x.data),), "arctanh")


def arccosh(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data < 1.0):
        raise ContractViolation("arccosh: input below 1")

    def bw(g):
        return (g / np.sqrt(np.maximum(x.data * x.data - 1.0, _TINY)),)

    return make_result(np.arccosh(x.data), (x,), bw, "arccosh")


def acosh1p(z) -> Tensor:
    """arccosh(1 + z), accurate for small ``z >= 0``."""
    z = as_tensor(z)
    if np.any(z.data < 0.0):
        raise ContractViolation("acosh1p: input below 0")
    root = np.sqrt(z.data * (z.data + 2.0))

    def bw(g):
        return (g / np.maximum(root, _TINY),)

    return make_result(np.log1p(z.data + root), (z,), bw, "acosh1p")


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)
    return make_result(out, (x,), lambda g: (g * out,), "exp")


def log(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data <= 0.0):
        raise ContractViolation("log: non-positive input")
    return make_result(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


def sqrt(x) -> Tensor:
    x = as_tensor(x)
    out = np.sqrt(x.data)
    return make_result(out, (x,), lambda g: (g * 0.5 / np.maximum(out, _TINY),), "sqrt")


def clamp(x, lo: float | None = None, hi: float | None = None) -> Tensor:
    """Clip to ``[lo, hi]``; gradient passes only where the input is inside."""
    x = as_tensor(x)
    out = np.clip(x.data, lo, hi)
    inside = out == x.data
    return make_result(out, (x,), lambda g: (g * inside,), "clamp")


def minimum(a, b) -> Tensor:
    """Elementwise min of two tensors; ties split the gradient evenly."""
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("minimum", a, b)
    out = np.minimum(a.data, b.data)
    wa = np.where(a.data < b.data, 1.0, np.where(a.data == b.data, 0.5, 0.0))

    def bw(g):
        return _unbroadcast(g * wa, a.shape), _unbroadcast(g * (1.0 - wa), b.shape)

    return make_result(out, (a, b), bw, "minimum")


# ---------------------------------------------------------------------------
# reductions and normalizers
# ---------------------------------------------------------------------------

def _expand_reduced(g: np.ndarray, shape, axis, keepdims: bool) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(g.reshape((1,) * len(shape)), shape)
    if not keepdims:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        axes = tuple(ax % len(shape) for ax in axes)
        for ax in sorted(axes):
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape)


def sum(x, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001 - mirrors numpy
    x = as_tensor(x)

    def bw(g):
        return (np.array(_expand_reduced(g, x.shape, axis, keepdims)),)

    return make_result(x.data.sum(axis=axis, keepdims=keepdims), (x,), bw, "sum")


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    out = x.data.mean(axis=axis, keepdims=keepdims)
    count = x.data.size / max(out.size, 1)

    def bw(g):
        return (np.array(_expand_reduced(g, x.shape, axis, keepdims)) / count,)

    return make_result(out, (x,), bw, "mean")


def norm(x, axis: int = -1, keepdims: bool = False) -> Tensor:
    """Euclidean norm along ``axis``; the gradient at the zero vector is zero."""
    x = as_tensor(x)
    n = np.sqrt((x.data * x.data).sum(axis=axis, keepdims=True))

    def bw(g):
        gk = g if keepdims else np.expand_dims(g, axis)
        return (gk * x.data / np.maximum(n, _TINY),)

    out = n if keepdims else np.squeeze(n, axis=axis)
    return make_result(out, (x,), bw, "norm")


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make_result(out, (x,), bw, "softmax")


def log_softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))

    def bw(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return make_result(out, (x,), bw, "log_softmax")


def layer_norm(x, weight, bias, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis then apply an affine map."""
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv

    def bw(g):
        gx = gw = gb = None
        if x.requires_grad:
            gh = g * weight.data
            gx = inv * (gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        if weight.requires_grad:
            gw = _unbroadcast(g * xhat, weight.shape)
        if bias.requires_grad:
            gb = _unbroadcast(g, bias.shape)
        return gx, gw, gb

    return make_result(xhat * weight.data + bias.data, (x, weight, bias), bw, "layer_norm")


def smooth_l1(a, b, beta: float = 1.0) -> Tensor:
    """Mean smooth-L1 (Huber with transition at ``beta``) between two tensors."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ContractViolation(f"smooth_l1: shapes {a.shape} and {b.shape} differ")
    d = a.data - b.data
    ad = np.abs(d)
    elem = np.where(ad < beta, 0.5 * d * d / beta, ad - 0.5 * beta)
    n = max(d.size, 1)

    def bw(g):
        slope = np.where(ad < beta, d / beta, np.sign(d)) * (g / n)
        return slope, -slope

    return make_result(np.asarray(elem.sum() / n), (a, b), bw, "smooth_l1")


# ---------------------------------------------------------------------------
# ordering, gradient routing
# ---------------------------------------------------------------------------

def sort(x, axis: int = -1, descending: bool = False) -> Tensor:
    """Sorted values; the permutation is fixed per forward pass.

    Gradient of ``out[i]`` is routed back to the original position ``perm[i]``.
    Ties keep their original order (stable sort).
    """
    x = as_tensor(x)
    key = -x.data if descending else x.data
    perm = np.argsort(key, axis=axis, kind="stable")
    out = np.take_along_axis(x.data, perm, axis=axis)

    def bw(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, perm, g, axis=axis)
        return (gx,)

    return make_result(out, (x,), bw, "sort")


def stop_gradient(x) -> Tensor:
    """Identity forward; contributes no gradient to ``x``."""
    x = as_tensor(x)
    return Tensor(x.data)


def straight_through(x, value) -> Tensor:
    """Forward returns ``value`` exactly; backward treats the op as identity in ``x``.

    Same gradient as ``x + stop_gradient(value - x)`` but without the rounding
    that form leaves in the forward value.
    """
    x, value = as_tensor(x), as_tensor(value)
    if x.shape != value.shape:
        raise ContractViolation(f"straight_through: shapes {x.shape} and {value.shape} differ")
    return make_result(value.data.copy(), (x,), lambda g: (g,), "straight_through")


# ---------------------------------------------------------------------------
# shape plumbing
# ---------------------------------------------------------------------------

def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ContractViolation(f"reshape: cannot reshape {x.shape} to {tuple(shape)}") from None
    return make_result(out, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x, axes=None) -> Tensor:
    x = as_tensor(x)
    axes = tuple(axes) if axes is not None else tuple(reversed(range(x.ndim)))
    inverse = tuple(np.argsort(axes))
    return make_result(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inverse),), "transpose")


def index(x, idx) -> Tensor:
    x = as_tensor(x)
    if isinstance(idx, Tensor):
        idx = idx.data.astype(np.int64)
    out = x.data[idx]

    def bw(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx, g)
        return (gx,)

    return make_result(np.array(out), (x,), bw, "index")


def take(x, indices, axis: int = 0) -> Tensor:
    """Gather slices of ``x`` along ``axis`` (embedding lookup, codebook gather)."""
    x = as_tensor(x)
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size and (indices.min() < -x.shape[axis] or indices.max() >= x.shape[axis]):
        raise ContractViolation(f"take: index out of range for axis of size {x.shape[axis]}")
    out = np.take(x.data, indices, axis=axis)

    def bw(g):
        gx = np.zeros_like(x.data)
        gm = np.moveaxis(gx, axis, 0)
        gg = np.moveaxis(g, list(range(axis, axis + indices.ndim)), list(range(indices.ndim)))
        np.add.at(gm, indices, gg)
        return (gx,)

    return make_result(out, (x,), bw, "take")


def concat(tensors, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise ContractViolation(f"concat: incompatible shapes {[t.shape for t in ts]}") from None
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return make_result(out, ts, bw, "concat")


# ---------------------------------------------------------------------------
# sequence ops (channel-last layout: batch x time x channels)
# ---------------------------------------------------------------------------

def conv1d(x, weight, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """1-D convolution over the time axis of a ``(B, L, C_in)`` tensor.

    ``weight`` has shape ``(K, C_in, C_out)``; the output is ``(B, L_out, C_out)``
    with ``L_out = (L + 2*padding - K) // stride + 1``.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if stride not in (1, 2):
        raise ContractViolation(f"conv1d: stride must be 1 or 2, got {stride}")
    if x.ndim != 3 or weight.ndim != 3 or x.shape[2] != weight.shape[1]:
        raise ContractViolation(f"conv1d: input {x.shape} incompatible with weight {weight.shape}")
    k, cin, cout = weight.shape
    bsz, length, _ = x.shape
    xp = np.pad(x.data, ((0, 0), (padding, padding), (0, 0)))
    lout = (length + 2 * padding - k) // stride + 1
    if lout < 1:
        raise ContractViolation(f"conv1d: input length {length} too short for kernel {k}")
    span = stride * (lout - 1) + 1
    cols = np.stack([xp[:, j : j + span : stride, :] for j in range(k)], axis=2)  # B, Lout, K, Cin
    flat = cols.reshape(bsz, lout, k * cin)
    out = flat @ weight.data.reshape(k * cin, cout)
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data
        parents.append(bias)

    def bw(g):
        gx = gw = gb = None
        if x.requires_grad:
            gcols = (g @ weight.data.reshape(k * cin, cout).T).reshape(bsz, lout, k, cin)
            gxp = np.zeros_like(xp)
            for j in range(k):
                gxp[:, j : j + span : stride, :] += gcols[:, :, j, :]
            gx = gxp[:, padding : padding + length, :]
        if weight.requires_grad:
            gw = (flat.reshape(-1, k * cin).T @ g.reshape(-1, cout)).reshape(k, cin, cout)
        if bias is not None and bias.requires_grad:
            gb = g.reshape(-1, cout).sum(axis=0)
        return (gx, gw, gb) if bias is not None else (gx, gw)

    return make_result(out, parents, bw, "conv1d")


def upsample_nearest(x, factor: int = 2, axis: int = 1) -> Tensor:
    x = as_tensor(x)
    out = np.repeat(x.data, factor, axis=axis)

    def bw(g):
        shape = list(x.shape)
        shape.insert(axis + 1, factor)
        return (g.reshape(shape).sum(axis=axis + 1),)

    return make_result(out, (x,), bw, "upsample_nearest")


def one_hot(indices, depth: int) -> np.ndarray:
    indices = np.asarray(indices, dtype=np.int64)
    out = np.zeros(indices.shape + (depth,), dtype=DTYPE)
    np.put_along_axis(out, indices[..., None], 1.0, axis=-1)
    return out
