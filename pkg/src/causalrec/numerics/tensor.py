"""Tensor storage and the reverse-mode tape.

All values are float64. Operations executed while a :class:`Tape` is active
and at least one input requires a gradient are recorded; ``Tape.backward``
replays their adjoints in exact reverse order.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from ..errors import ContractError, NumericError, TapeError

FLOAT = np.float64

_ACTIVE: list["Tape"] = []


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_leaf", "name")

    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=FLOAT)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if self.requires_grad else None
        self._leaf = True
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # operator sugar; implementations live in ops
    def __add__(self, other):
        from . import ops

        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops

        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops

        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops

        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops

        return ops.div(self, other)

    def __neg__(self):
        from . import ops

        return ops.mul(self, -1.0)

    def __matmul__(self, other):
        from . import ops

        return ops.matmul(self, other)

    def __getitem__(self, key):
        from . import ops

        return ops.getitem(self, key)

    @property
    def T(self):
        from . import ops

        return ops.transpose(self)

    def sum(self, axis=None, keepdims=False):
        from . import ops

        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        from . import ops

        return ops.mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        from . import ops

        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class _Node:
    __slots__ = ("out", "parents", "grad_fn")

    def __init__(self, out, parents, grad_fn):
        self.out = out
        self.parents = parents
        self.grad_fn = grad_fn


class Tape:
    """Single-use record of a forward pass.

    Usage::

        with Tape() as tape:
            loss = f(x)
        tape.backward(loss)
    """

    def __init__(self):
        self._nodes: list[_Node] = []
        self._consumed = False
        self.visit_order: list[int] = []

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.remove(self)

    def __len__(self) -> int:
        return len(self._nodes)

    def push(self, out: Tensor, parents: Sequence[Tensor], grad_fn) -> None:
        if self._consumed:
            raise TapeError("tape already consumed by backward; start a new tape")
        self._nodes.append(_Node(out, tuple(parents), grad_fn))

    def backward(self, loss: Tensor) -> None:
        if self._consumed:
            raise TapeError("backward already ran on this tape; record a new forward pass")
        if loss.data.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        if not loss.requires_grad:
            raise TapeError("loss was not recorded on a tape")
        self._consumed = True
        pending = {id(loss): np.ones_like(loss.data)}
        for idx in range(len(self._nodes) - 1, -1, -1):
            node = self._nodes[idx]
            g = pending.pop(id(node.out), None)
            if g is None:
                continue
            self.visit_order.append(idx)
            node.out.grad = g
            for parent, pg in zip(node.parents, node.grad_fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if parent._leaf:
                    parent.grad = parent.grad + pg
                else:
                    prev = pending.get(id(parent))
                    pending[id(parent)] = pg if prev is None else prev + pg
        if not np.isfinite(loss.data).all():
            raise NumericError("non-finite loss")


def active_tape() -> Tape | None:
    return _ACTIVE[-1] if _ACTIVE else None


def record(
    data: np.ndarray,
    parents: Sequence[Tensor],
    grad_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]],
    *,
    finite: bool = True,
) -> Tensor:
    """Wrap ``data`` as the output of an op and record it on the active tape.

    ``grad_fn`` maps the output adjoint to one adjoint per parent (``None``
    where no gradient is needed).
    """
    data = np.asarray(data, dtype=FLOAT)
    if finite and not np.isfinite(data).all():
        raise NumericError("non-finite value produced by forward op")
    tape = active_tape()
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out._leaf = False
    out.requires_grad = tape is not None and any(p.requires_grad for p in parents)
    if out.requires_grad:
        tape.push(out, parents, grad_fn)
    return out


def backward(loss: Tensor, tape: Tape) -> None:
    tape.backward(loss)
