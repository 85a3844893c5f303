"""Differentiable primitives.

Every op takes :class:`Tensor` operands (plain arrays/scalars are wrapped as
constants) and records itself on the operands' tape when any is tracked.
Leading axes broadcast numpy-style; backward rules sum the broadcast axes
back out.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np
from scipy.special import erf

from .tensor import ShapeError, Tape, Tensor

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _t(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _tape_of(*xs: Tensor) -> Tape | None:
    for x in xs:
        if x.tape is not None:
            return x.tape
    return None


def _emit(op: str, inputs: Sequence[Tensor], out: np.ndarray, backward) -> Tensor:
    tape = _tape_of(*inputs)
    if tape is None:
        return Tensor(out)
    return tape.record(op, inputs, out, backward)


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# -- linear algebra ---------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes; a leading batch axis broadcasts."""
    a, b = _t(a), _t(b)
    if a.data.ndim < 2 or b.data.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    if a.data.ndim == 3 and b.data.ndim == 3 and a.shape[0] != b.shape[0]:
        raise ShapeError(f"matmul: batch sizes differ in {a.shape} and {b.shape}")
    A, B = a.data, b.data
    out = A @ B

    def back(g):
        ga = unbroadcast(g @ np.swapaxes(B, -1, -2), A.shape)
        gb = unbroadcast(np.swapaxes(A, -1, -2) @ g, B.shape)
        return ga, gb

    return _emit("matmul", (a, b), out, back)


def transpose(x) -> Tensor:
    """Swap the last two axes."""
    x = _t(x)
    if x.data.ndim < 2:
        raise ShapeError(f"transpose needs at least 2 axes, got {x.shape}")
    out = np.ascontiguousarray(np.swapaxes(x.data, -1, -2))
    return _emit("transpose", (x,), out, lambda g: (np.swapaxes(g, -1, -2),))


# -- elementwise ------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    _broadcast_shape("add", a, b)
    sa, sb = a.shape, b.shape
    return _emit("add", (a, b), a.data + b.data,
                 lambda g: (unbroadcast(g, sa), unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    _broadcast_shape("sub", a, b)
    sa, sb = a.shape, b.shape
    return _emit("sub", (a, b), a.data - b.data,
                 lambda g: (unbroadcast(g, sa), unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    _broadcast_shape("mul", a, b)
    A, B = a.data, b.data
    return _emit("mul", (a, b), A * B,
                 lambda g: (unbroadcast(g * B, A.shape), unbroadcast(g * A, B.shape)))


def div(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    _broadcast_shape("div", a, b)
    A, B = a.data, b.data
    out = A / B
    return _emit("div", (a, b), out,
                 lambda g: (unbroadcast(g / B, A.shape), unbroadcast(-g * out / B, B.shape)))


def scale(x, factor: float) -> Tensor:
    x = _t(x)
    return _emit("scale", (x,), x.data * factor, lambda g: (g * factor,))


def square(x) -> Tensor:
    x = _t(x)
    X = x.data
    return _emit("square", (x,), X * X, lambda g: (2.0 * g * X,))


def gelu_derivative(x: np.ndarray) -> np.ndarray:
    cdf = 0.5 * (1.0 + erf(x / _SQRT2))
    return cdf + x * _INV_SQRT_2PI * np.exp(-0.5 * x * x)


def gelu(x) -> Tensor:
    """Exact GELU, x * Phi(x), with Phi the standard normal CDF."""
    x = _t(x)
    X = x.data
    out = X * 0.5 * (1.0 + erf(X / _SQRT2))
    # looked up at call time so tests can substitute a broken derivative
    return _emit("gelu", (x,), out, lambda g: (g * gelu_derivative(X),))


def softmax_rows(x) -> Tensor:
    """Softmax along the last axis, max-shifted for stability."""
    x = _t(x)
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return _emit("softmax_rows", (x,), p, back)


# -- reductions -------------------------------------------------------------

def sum(x) -> Tensor:  # noqa: A001 - mirrors the op name
    """Sum of all elements, as a shape-[1] tensor."""
    x = _t(x)
    shape = x.shape
    return _emit("sum", (x,), np.array([x.data.sum()]),
                 lambda g: (np.full(shape, g.reshape(-1)[0]),))


def mean(x) -> Tensor:
    x = _t(x)
    return scale(sum(x), 1.0 / x.data.size)


# -- structural -------------------------------------------------------------

def slice_rows_strided(x, offset: int, stride: int) -> Tensor:
    """Rows offset, offset+stride, ... along the second-to-last axis."""
    x = _t(x)
    if stride < 1 or not 0 <= offset < stride:
        raise ValueError(f"need 0 <= offset < stride, got offset={offset} stride={stride}")
    if x.data.ndim < 2:
        raise ShapeError(f"slice_rows_strided needs at least 2 axes, got {x.shape}")
    shape = x.shape
    out = np.ascontiguousarray(x.data[..., offset::stride, :])

    def back(g):
        full = np.zeros(shape)
        full[..., offset::stride, :] = g
        return (full,)

    return _emit("slice_rows_strided", (x,), out, back)


def merge_rows_strided(parts: Sequence) -> Tensor:
    """Interleave equal-shaped row blocks: part i fills rows i, i+s, i+2s, ..."""
    parts = [_t(p) for p in parts]
    if not parts:
        raise ValueError("merge_rows_strided needs at least one part")
    shape = parts[0].shape
    for p in parts[1:]:
        if p.shape != shape:
            raise ShapeError(f"merge_rows_strided: ragged parts {shape} and {p.shape}")
    s = len(parts)
    out_shape = shape[:-2] + (shape[-2] * s, shape[-1])
    out = np.empty(out_shape)
    for i, p in enumerate(parts):
        out[..., i::s, :] = p.data

    def back(g):
        return tuple(np.ascontiguousarray(g[..., i::s, :]) for i in range(s))

    return _emit("merge_rows_strided", parts, out, back)


def slice_cols(x, start: int, stop: int) -> Tensor:
    x = _t(x)
    if not 0 <= start < stop <= x.shape[-1]:
        raise ShapeError(f"slice_cols: bad range [{start}, {stop}) for shape {x.shape}")
    shape = x.shape
    out = np.ascontiguousarray(x.data[..., start:stop])

    def back(g):
        full = np.zeros(shape)
        full[..., start:stop] = g
        return (full,)

    return _emit("slice_cols", (x,), out, back)


def concat_cols(parts: Sequence) -> Tensor:
    parts = [_t(p) for p in parts]
    lead = parts[0].shape[:-1]
    for p in parts[1:]:
        if p.shape[:-1] != lead:
            raise ShapeError(f"concat_cols: leading shapes differ, {parts[0].shape} vs {p.shape}")
    widths = [p.shape[-1] for p in parts]
    out = np.concatenate([p.data for p in parts], axis=-1)
    bounds = np.cumsum([0] + widths)

    def back(g):
        return tuple(np.ascontiguousarray(g[..., bounds[i]:bounds[i + 1]])
                     for i in range(len(parts)))

    return _emit("concat_cols", parts, out, back)
