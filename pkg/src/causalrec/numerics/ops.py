"""Differentiable forward operations."""

from __future__ import annotations

import numpy as np

from .. import kernels
from ..errors import ContractError, DimensionError, NumericError
from .tensor import Tensor, as_tensor, record


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return record(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return record(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return record(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.data / b.data
    return record(
        out,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        ),
    )


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError("matmul needs operands with at least 2 dimensions")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")

    def grad_fn(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return record(a.data @ b.data, (a, b), grad_fn)


def transpose(a) -> Tensor:
    a = as_tensor(a)
    return record(np.swapaxes(a.data, -1, -2), (a,), lambda g: (np.swapaxes(g, -1, -2),))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return record(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def sum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)

    def grad_fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return record(a.data.sum(axis=axis, keepdims=keepdims), (a,), grad_fn)


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    count = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def getitem(a, key) -> Tensor:
    a = as_tensor(a)

    def grad_fn(g):
        out = np.zeros_like(a.data)
        np.add.at(out, key, g)
        return (out,)

    return record(a.data[key], (a,), grad_fn)


def relu(a) -> Tensor:
    a = as_tensor(a)
    on = a.data > 0
    return record(np.where(on, a.data, 0.0), (a,), lambda g: (g * on,))


def absolute(a) -> Tensor:
    a = as_tensor(a)
    return record(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def log_sigmoid(a) -> Tensor:
    """log(sigmoid(x)) without overflow: -log(1 + exp(-x))."""
    a = as_tensor(a)
    out = -np.logaddexp(0.0, -a.data)
    # d/dx log sigmoid(x) = sigmoid(-x)
    return record(out, (a,), lambda g: (g * np.exp(-np.logaddexp(0.0, a.data)),))


def take_rows(table, index) -> Tensor:
    """Gather rows of a 2-D table: ``table[index]`` for an integer array of any shape."""
    table = as_tensor(table)
    index = np.asarray(index)
    if index.size and (index.min() < 0 or index.max() >= table.shape[0]):
        raise ContractError("row index out of range")
    flat = np.ascontiguousarray(index.reshape(-1), dtype=np.int64)

    def grad_fn(g):
        g2 = np.ascontiguousarray(g.reshape(-1, table.shape[1]))
        return (kernels.scatter_rows(flat, g2, table.shape[0]),)

    return record(table.data[index], (table,), grad_fn)


def masked(a, keep) -> Tensor:
    """Replace entries where ``keep`` is False with -inf (softmax mask sentinel)."""
    a = as_tensor(a)
    keep = np.broadcast_to(np.asarray(keep, dtype=bool), a.shape)
    return record(
        np.where(keep, a.data, -np.inf),
        (a,),
        lambda g: (np.where(keep, g, 0.0),),
        finite=False,
    )


def softmax_rows(x) -> Tensor:
    """Softmax over the last axis. -inf entries get weight 0; all -inf rows give zeros."""
    x = as_tensor(x)
    if np.isnan(x.data).any() or np.isposinf(x.data).any():
        raise NumericError("softmax input contains NaN or +inf")
    shape = x.shape
    x2 = np.ascontiguousarray(x.data.reshape(-1, shape[-1]))
    y2 = kernels.softmax_rows(x2)

    def grad_fn(g):
        g2 = np.ascontiguousarray(g.reshape(-1, shape[-1]))
        return (kernels.softmax_rows_grad(y2, g2).reshape(shape),)

    return record(y2.reshape(shape), (x,), grad_fn)


def layer_norm(x, gamma, beta, eps: float = 1e-8) -> Tensor:
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    d = x.shape[-1]
    if d < 2:
        raise ContractError("layer_norm needs at least 2 features per vector")
    if eps <= 0:
        raise ContractError("layer_norm eps must be positive")
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError("layer_norm affine terms must have shape (D,)")
    shape = x.shape
    x2 = np.ascontiguousarray(x.data.reshape(-1, d))
    y2, xhat, rstd = kernels.layer_norm(x2, np.ascontiguousarray(gamma.data), np.ascontiguousarray(beta.data), float(eps))

    def grad_fn(g):
        g2 = np.ascontiguousarray(g.reshape(-1, d))
        dx, dgamma, dbeta = kernels.layer_norm_grad(g2, xhat, rstd, np.ascontiguousarray(gamma.data))
        return dx.reshape(shape), dgamma, dbeta

    return record(y2.reshape(shape), (x, gamma, beta), grad_fn)


def dropout(x, p: float, training: bool, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout: kept entries are scaled by 1/(1-p); identity in eval mode."""
    x = as_tensor(x)
    if not 0.0 <= p < 1.0:
        raise ContractError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ContractError("training-mode dropout needs an rng")
    scale = (rng.random(x.shape) >= p) / (1.0 - p)
    return record(x.data * scale, (x,), lambda g: (g * scale,))


def expm_array(m: np.ndarray) -> np.ndarray:
    """Matrix exponential of a square array by scaling and squaring."""
    m = np.ascontiguousarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionError(f"expm needs a square matrix, got {m.shape}")
    if not np.isfinite(m).all():
        raise NumericError("expm input is not finite")
    with np.errstate(over="ignore", invalid="ignore"):
        out = kernels.expm(m)
    if not np.isfinite(out).all():
        raise NumericError("expm overflowed")
    return out


def expm(m) -> Tensor:
    m = as_tensor(m)
    out = expm_array(m.data)

    def grad_fn(g):
        # Frechet adjoint: upper-right block of exp([[M^T, G], [0, M^T]])
        n = m.shape[0]
        block = np.zeros((2 * n, 2 * n))
        block[:n, :n] = m.data.T
        block[n:, n:] = m.data.T
        block[:n, n:] = g
        return (expm_array(block)[:n, n:],)

    return record(out, (m,), grad_fn)


def trace(m) -> Tensor:
    m = as_tensor(m)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionError("trace needs a square matrix")
    n = m.shape[0]
    return record(np.trace(m.data), (m,), lambda g: (g * np.eye(n),))


__all__ = [
    "absolute",
    "add",
    "div",
    "dropout",
    "expm",
    "expm_array",
    "getitem",
    "layer_norm",
    "log_sigmoid",
    "masked",
    "matmul",
    "mean",
    "mul",
    "relu",
    "reshape",
    "softmax_rows",
    "sub",
    "sum",
    "take_rows",
    "trace",
    "transpose",
]
