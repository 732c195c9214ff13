"""Causal discovery block.

Second-moment structure over sequence positions, the trace-exponential
acyclicity penalty, the L1 sparsity penalty, binarisation into the relation
matrix used by the attention booster, and the augmented-Lagrangian multiplier
schedule.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ContractError, DimensionError
from .numerics import Tensor, as_tensor, record
from .numerics.ops import expm_array

GAMMA1 = 10.0
GAMMA2 = 0.25
RHO0 = 1.0
RHO_MAX = 1e16
TAU = 0.3


@dataclass
class CovarianceEstimate:
    W: Tensor
    sample_count: int
    centered: bool = False


def batch_covariance(reprs, centered: bool = False) -> CovarianceEstimate:
    """Position-by-position second moment of final-layer representations.

    ``reprs`` has shape [N, n, D]. Batch and hidden entries are pooled as
    samples, so ``W[i, j] = sum_k sum_d Z[k, i, d] * Z[k, j, d] / (N * D)``.
    """
    z = as_tensor(reprs)
    if z.ndim != 3:
        raise DimensionError(f"expected [N, n, D] representations, got {z.shape}")
    N, n, D = z.shape
    if centered and N * D < 2:
        raise ContractError("centered covariance needs at least two samples per position")
    x = z.data
    if centered:
        x = x - x.mean(axis=(0, 2), keepdims=True)
    scale = 1.0 / (N * D)
    flat = np.ascontiguousarray(np.moveaxis(x, 1, 0).reshape(n, N * D))
    W = flat @ flat.T * scale

    def grad_fn(g):
        sym = (g + g.T) * scale
        return (np.einsum("ij,kjd->kid", sym, x),)

    return CovarianceEstimate(record(W, (z,), grad_fn), N * D, centered)


def acyclicity_penalty(W) -> Tensor:
    """h(W) = trace(exp(W * W)) - n; zero iff the support of W is acyclic."""
    W = as_tensor(W)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise DimensionError(f"acyclicity penalty needs a square matrix, got {W.shape}")
    E = expm_array(W.data * W.data)
    h = np.trace(E) - W.shape[0]
    return record(h, (W,), lambda g: (g * E.T * 2.0 * W.data,))


def l1_penalty(W) -> Tensor:
    W = as_tensor(W)
    return record(np.abs(W.data).sum(), (W,), lambda g: (g * np.sign(W.data),))


@dataclass
class CausalState:
    """Learned structure plus augmented-Lagrangian bookkeeping.

    ``W`` and ``R`` are position-by-position. ``beta_mult`` is the Lagrange
    multiplier on the acyclicity violation.
    """

    n: int
    W: np.ndarray | None = None
    R: np.ndarray | None = None
    rho: float = RHO0
    beta_mult: float = 0.0
    kappa: float = 0.0
    kappa_prev: float = 0.0
    lam: float = 0.0
    gamma1: float = GAMMA1
    gamma2: float = GAMMA2
    tau: float = TAU
    rho_max: float = RHO_MAX
    epoch_h: list[float] = field(default_factory=list)
    _w_sum: np.ndarray | None = field(default=None, repr=False)
    _w_count: int = field(default=0, repr=False)

    def __post_init__(self):
        if self.W is None:
            self.W = np.zeros((self.n, self.n))
        if self.R is None:
            self.R = np.zeros((self.n, self.n))

    def observe(self, W: np.ndarray, h: float) -> None:
        """Accumulate one batch's structure estimate and violation."""
        self.epoch_h.append(float(h))
        self._w_sum = W.copy() if self._w_sum is None else self._w_sum + W
        self._w_count += 1

    def end_epoch(self) -> "CausalState":
        """Multiplier update plus R refresh from the epoch-mean W."""
        new = update_multipliers(self, self.epoch_h)
        if self._w_count:
            new.W = self._w_sum / self._w_count
            new.R = extract_relation_matrix(new.W, new.tau)
        new.epoch_h = []
        new._w_sum = None
        new._w_count = 0
        return new

    def scalars(self) -> dict[str, float]:
        return {
            "rho": self.rho,
            "beta_mult": self.beta_mult,
            "kappa": self.kappa,
            "kappa_prev": self.kappa_prev,
            "lam": self.lam,
            "gamma1": self.gamma1,
            "gamma2": self.gamma2,
            "tau": self.tau,
            "rho_max": self.rho_max,
        }


def dag_loss(Ws: Sequence, state: CausalState) -> tuple[Tensor, list[float]]:
    """Augmented-Lagrangian term sum_k rho/2 h(W_k)^2 + beta |h(W_k)|.

    Returns the loss and the individual h values.
    """
    from .numerics import ops

    total = None
    hs = []
    for W in Ws:
        h = acyclicity_penalty(W)
        hs.append(float(h.data))
        term = ops.add(ops.mul(ops.mul(h, h), 0.5 * state.rho), ops.mul(ops.absolute(h), state.beta_mult))
        total = term if total is None else ops.add(total, term)
    if total is None:
        total = Tensor(0.0)
    return total, hs


def extract_relation_matrix(W, tau: float = TAU) -> np.ndarray:
    """Binary relation matrix: |W| / max|W| > tau, diagonal cleared."""
    if tau <= 0:
        raise ContractError("tau must be positive")
    W = W.data if isinstance(W, Tensor) else np.asarray(W, dtype=np.float64)
    peak = np.abs(W).max() if W.size else 0.0
    if peak == 0.0:
        return np.zeros_like(W)
    R = (np.abs(W) / peak > tau).astype(np.float64)
    np.fill_diagonal(R, 0.0)
    return R


def update_multipliers(state: CausalState, h_values: Sequence[float]) -> CausalState:
    """End-of-epoch update: beta += rho * kappa; rho *= gamma1 iff kappa >= gamma2 * kappa_prev.

    ``kappa_prev`` starts at 0, so the first escalation is unconditional.
    """
    kappa = float(np.mean(h_values)) if len(h_values) else 0.0
    beta = state.beta_mult + state.rho * kappa
    rho = state.rho
    if kappa >= state.gamma2 * state.kappa_prev:
        rho = min(rho * state.gamma1, state.rho_max)
    return dataclasses.replace(
        state, rho=rho, beta_mult=beta, kappa=kappa, kappa_prev=kappa, epoch_h=list(state.epoch_h)
    )


def matrix_to_text(M: np.ndarray) -> str:
    return "".join(" ".join(repr(float(v)) for v in row) + "\n" for row in np.asarray(M))


def matrix_from_text(text: str) -> np.ndarray:
    rows = [[float(v) for v in line.split()] for line in text.splitlines() if line.strip()]
    return np.array(rows, dtype=np.float64)


def edge_list(W: np.ndarray, R: np.ndarray | None = None) -> list[tuple[int, int, float]]:
    """Edges ``(i, j, W[i, j])`` over the support of R (or of W when R is None)."""
    W = np.asarray(W)
    support = (R != 0) if R is not None else (W != 0)
    return [(int(i), int(j), float(W[i, j])) for i, j in zip(*np.nonzero(support))]


def edge_list_to_text(edges) -> str:
    return "".join(f"{i} {j} {w!r}\n" for i, j, w in edges)
