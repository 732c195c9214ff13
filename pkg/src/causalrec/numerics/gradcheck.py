"""Central finite-difference gradient checks."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tape, Tensor


def _scalarize(out: Tensor, weights: np.ndarray | None):
    from . import ops

    if out.data.size == 1:
        return ops.sum(out)
    return ops.sum(ops.mul(out, weights))


# Gradients smaller than this are compared on an absolute scale: below it the
# central difference is dominated by rounding, so a ratio means nothing.
GRAD_FLOOR = 1e-6


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = GRAD_FLOOR) -> float:
    num = np.linalg.norm(a - b)
    den = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return float(num / den)


def gradcheck(
    fn: Callable[..., Tensor],
    inputs: Sequence[np.ndarray],
    *,
    eps: float = 1e-4,
    rng: np.random.Generator | None = None,
) -> float:
    """Worst relative error between tape gradients and central differences.

    Non-scalar outputs are reduced with a fixed random weighting so that every
    output entry contributes to the checked adjoint.
    """
    rng = rng or np.random.default_rng(0)
    arrays = [np.array(x, dtype=np.float64) for x in inputs]
    leaves = [Tensor(x.copy(), requires_grad=True) for x in arrays]
    with Tape() as tape:
        out = fn(*leaves)
        weights = None if out.data.size == 1 else rng.standard_normal(out.shape)
        loss = _scalarize(out, weights)
    tape.backward(loss)

    def value(xs):
        y = fn(*[Tensor(x) for x in xs]).data
        return float(y.sum() if weights is None else (y * weights).sum())

    worst = 0.0
    for k, x in enumerate(arrays):
        numeric = np.zeros_like(x)
        it = np.nditer(x, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = x[idx]
            x[idx] = orig + eps
            up = value(arrays)
            x[idx] = orig - eps
            down = value(arrays)
            x[idx] = orig
            numeric[idx] = (up - down) / (2 * eps)
        worst = max(worst, relative_error(leaves[k].grad, numeric))
    return worst
