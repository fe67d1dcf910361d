"""Differentiable array operations."""
from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from ..exceptions import (
    AllKeysMaskedError,
    AxisOutOfRangeError,
    EmptyInputError,
    IndexOutOfRangeError,
    ShapeMismatchError,
    UnknownKindError,
)
from .tensor import Tensor, as_tensor, make_result


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _check_axis(x: Tensor, dim: int) -> int:
    if not -x.ndim <= dim < x.ndim:
        raise AxisOutOfRangeError(f"axis {dim} out of range for tensor of rank {x.ndim}")
    return dim % x.ndim


def _broadcast_shape(a: Tensor, b: Tensor) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatchError(f"shapes {a.shape} and {b.shape} are not broadcastable") from None


# ----------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)
    sa, sb = a.shape, b.shape
    return make_result("add", a.data + b.data, (a, b),
                       lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)
    sa, sb = a.shape, b.shape
    return make_result("sub", a.data - b.data, (a, b),
                       lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)
    ad, bd = a.data, b.data

    def back(g):
        return (_unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
                _unbroadcast(g * ad, bd.shape) if b.requires_grad else None)

    return make_result("mul", ad * bd, (a, b), back)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return make_result("neg", -a.data, (a,), lambda g: (-g,))


def relu(a) -> Tensor:
    a = as_tensor(a)
    pos = a.data > 0
    return make_result("relu", np.where(pos, a.data, 0.0), (a,), lambda g: (g * pos,))


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    s = _stable_sigmoid(a.data)
    return make_result("sigmoid", s, (a,), lambda g: (g * s * (1.0 - s),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    t = np.tanh(a.data)
    return make_result("tanh", t, (a,), lambda g: (g * (1.0 - t * t),))


_UNARY = {"relu": relu, "sigmoid": sigmoid, "tanh": tanh}
_BINARY = {"add": add, "sub": sub, "mul": mul}


def elementwise(kind: str, a, b=None) -> Tensor:
    """Dispatch one of add/sub/mul (binary) or relu/sigmoid/tanh (unary)."""
    if kind in _BINARY:
        if b is None:
            raise ShapeMismatchError(f"{kind} needs two operands")
        return _BINARY[kind](a, b)
    if kind in _UNARY:
        return _UNARY[kind](a)
    raise UnknownKindError(f"unknown elementwise kind {kind!r}")


# ----------------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Tensor:
    """Batched matrix product over the last two axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeMismatchError(f"cannot multiply shapes {a.shape} and {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeMismatchError(f"batch extents of {a.shape} and {b.shape} do not broadcast") from None
    ad, bd = a.data, b.data
    if bd.ndim == 2:
        # a stack of rows times one matrix: flatten into a single GEMM
        k, n = bd.shape

        def back(g):
            ga = g @ bd.T if a.requires_grad else None
            gb = ad.reshape(-1, k).T @ g.reshape(-1, n) if b.requires_grad else None
            return ga, gb

        return make_result("matmul", (ad.reshape(-1, k) @ bd).reshape(ad.shape[:-1] + (n,)), (a, b), back)

    def back(g):
        ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape) if b.requires_grad else None
        return ga, gb

    return make_result("matmul", ad @ bd, (a, b), back)


# ----------------------------------------------------------------------------
# shape manipulation


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    old = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeMismatchError(f"cannot reshape {old} into {tuple(shape)}") from None
    return make_result("reshape", out, (x,), lambda g: (g.reshape(old),))


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return make_result("transpose", x.data.transpose(axes), (x,), lambda g: (g.transpose(inverse),))


def select(x: Tensor, dim: int, index: int) -> Tensor:
    """Take one slice along ``dim``, dropping that axis."""
    x = as_tensor(x)
    dim = _check_axis(x, dim)
    if not -x.shape[dim] <= index < x.shape[dim]:
        raise IndexOutOfRangeError(f"index {index} out of range for axis of extent {x.shape[dim]}")
    shape = x.shape

    def back(g):
        full = np.zeros(shape)
        idx = [slice(None)] * len(shape)
        idx[dim] = index
        full[tuple(idx)] = g
        return (full,)

    return make_result("select", np.take(x.data, index, axis=dim), (x,), back)


def take_rows(x: Tensor, ids) -> Tensor:
    """Gather rows of a 2-D tensor; repeated ids accumulate gradient."""
    x = as_tensor(x)
    ids = np.asarray(ids)
    if not np.issubdtype(ids.dtype, np.integer):
        raise IndexOutOfRangeError(f"row ids must be integers, got dtype {ids.dtype}")
    n = x.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= n):
        bad = ids[(ids < 0) | (ids >= n)].reshape(-1)[0]
        raise IndexOutOfRangeError(f"id {int(bad)} out of range [0, {n})")
    shape = x.shape

    def back(g):
        full = np.zeros(shape)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, *shape[1:]))
        return (full,)

    return make_result("take_rows", x.data[ids], (x,), back)


def concat(tensors: Sequence[Tensor], dim: int) -> Tensor:
    """Join tensors along ``dim``, keeping input order."""
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise EmptyInputError("concat needs at least one tensor")
    dim = _check_axis(tensors[0], dim)
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != dim):
            raise ShapeMismatchError(f"cannot concat shapes {ref} and {t.shape} along axis {dim}")
    bounds = np.cumsum([0] + [t.shape[dim] for t in tensors])

    def back(g):
        idx = [slice(None)] * g.ndim
        out = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            idx[dim] = slice(lo, hi)
            out.append(g[tuple(idx)])
        return out

    return make_result("concat", np.concatenate([t.data for t in tensors], axis=dim), tensors, back)


# ----------------------------------------------------------------------------
# reductions


def sum_reduce(x: Tensor, dim: Optional[int] = None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    shape = x.shape
    if dim is None:
        return make_result("sum", np.asarray(x.data.sum()), (x,),
                           lambda g: (np.broadcast_to(g, shape),))
    dim = _check_axis(x, dim)

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, dim)
        return (np.broadcast_to(g, shape),)

    return make_result("sum", x.data.sum(axis=dim, keepdims=keepdims), (x,), back)


def mean_reduce(x: Tensor, dim: int, squeeze: bool = True) -> Tensor:
    """Arithmetic mean along ``dim``; the axis is dropped when ``squeeze``."""
    x = as_tensor(x)
    dim = _check_axis(x, dim)
    shape = x.shape
    n = shape[dim]

    def back(g):
        if squeeze:
            g = np.expand_dims(g, dim)
        return (np.broadcast_to(g / n, shape),)

    return make_result("mean", x.data.mean(axis=dim, keepdims=not squeeze), (x,), back)


def masked_mean(x: Tensor, mask: np.ndarray, dim: int) -> Tensor:
    """Mean over ``dim`` counting only positions where ``mask`` is true.

    ``mask`` has the shape of ``x`` without its trailing axis.
    """
    x = as_tensor(x)
    m = np.asarray(mask, dtype=np.float64)[..., None]
    count = m.sum(axis=dim, keepdims=True)
    if np.any(count == 0):
        raise EmptyInputError("masked mean over a slice with no valid positions")
    total = sum_reduce(mul(x, m), dim=dim)
    return mul(total, 1.0 / np.squeeze(count, axis=dim))


# ----------------------------------------------------------------------------
# normalizing maps


def softmax(x: Tensor, dim: int = -1, mask: Optional[np.ndarray] = None) -> Tensor:
    """Max-shifted softmax. Positions where ``mask`` is false get weight 0."""
    x = as_tensor(x)
    dim = _check_axis(x, dim)
    z = x.data
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), z.shape)
        if not np.all(mask.any(axis=dim)):
            raise AllKeysMaskedError("a softmax row has every position masked")
        z = np.where(mask, z, -np.inf)
    z = z - z.max(axis=dim, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=dim, keepdims=True)

    def back(g):
        return (y * (g - (g * y).sum(axis=dim, keepdims=True)),)

    return make_result("softmax", y, (x,), back)


def log_softmax(x: Tensor, dim: int = -1) -> Tensor:
    x = as_tensor(x)
    dim = _check_axis(x, dim)
    z = x.data - x.data.max(axis=dim, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=dim, keepdims=True))
    out = z - lse
    y = np.exp(out)
    return make_result("log_softmax", out, (x,),
                       lambda g: (g - y * g.sum(axis=dim, keepdims=True),))


# operator sugar
Tensor.__add__ = add
Tensor.__radd__ = lambda self, other: add(other, self)
Tensor.__sub__ = sub
Tensor.__rsub__ = lambda self, other: sub(other, self)
Tensor.__mul__ = mul
Tensor.__rmul__ = lambda self, other: mul(other, self)
Tensor.__neg__ = neg
Tensor.__matmul__ = matmul
