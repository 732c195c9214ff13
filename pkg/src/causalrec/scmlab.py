"""Synthetic linear-SCM laboratory.

Convention: ``B[i, j]`` is the weight of edge i -> j, and one sample (a row
vector x) satisfies ``x = x B + u Lambda``, i.e. ``x_j = sum_i B[i, j] x_i +
lam_j u_j``. In column form this is ``x = (I - B^T)^{-1} Lambda u``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.optimize as sopt

from . import kernels
from .causal import CausalState, acyclicity_penalty, update_multipliers
from .errors import ContractError
from .numerics.ops import expm_array


@dataclass
class ScmInstance:
    B: np.ndarray
    lam: np.ndarray
    sigma2: float = 1.0
    order: np.ndarray | None = None

    def __post_init__(self):
        self.B = np.asarray(self.B, dtype=np.float64)
        self.lam = np.asarray(self.lam, dtype=np.float64)
        n = self.B.shape[0]
        if self.B.shape != (n, n) or self.lam.shape != (n,):
            raise ContractError("B must be n x n and lam length n")
        if (self.lam <= 0).any() or self.sigma2 <= 0:
            raise ContractError("noise scales and variance must be positive")
        if self.order is None:
            self.order = topological_order(self.B != 0)
        if self.order is None:
            raise ContractError("support of B is cyclic")

    @property
    def n(self) -> int:
        return self.B.shape[0]

    @property
    def support(self) -> np.ndarray:
        return (self.B != 0).astype(np.int8)


def topological_order(adj) -> np.ndarray | None:
    """Kahn's algorithm; None when the directed graph has a cycle."""
    adj = np.asarray(adj, dtype=bool)
    n = adj.shape[0]
    indeg = adj.sum(axis=0).astype(int)
    ready = [j for j in range(n) if indeg[j] == 0]
    order = []
    while ready:
        i = ready.pop(0)
        order.append(i)
        for j in np.flatnonzero(adj[i]):
            indeg[j] -= 1
            if indeg[j] == 0:
                ready.append(int(j))
    return np.array(order, dtype=np.int64) if len(order) == n else None


def is_dag(adj) -> bool:
    adj = np.asarray(adj, dtype=bool)
    return not np.diag(adj).any() and topological_order(adj) is not None


def generate_random_dag(
    n: int,
    edge_prob: float,
    weight_range: tuple[float, float] = (0.5, 2.0),
    rng: np.random.Generator | None = None,
    lam: np.ndarray | float = 1.0,
    sigma2: float = 1.0,
) -> ScmInstance:
    """Random permutation order; each forward pair gets an edge with prob ``edge_prob``.

    Edge magnitudes are uniform on ``weight_range`` with a random sign.
    """
    if n < 2:
        raise ContractError("n must be at least 2")
    if not 0.0 <= edge_prob <= 1.0:
        raise ContractError("edge_prob must be in [0, 1]")
    lo, hi = weight_range
    if lo <= 0 or hi < lo:
        raise ContractError("weight magnitudes must be positive and ordered")
    rng = rng or np.random.default_rng()
    perm = rng.permutation(n)
    B = np.zeros((n, n))
    for a in range(n):
        for b in range(a + 1, n):
            if rng.random() < edge_prob:
                B[perm[a], perm[b]] = rng.uniform(lo, hi) * rng.choice((-1.0, 1.0))
    lam = np.broadcast_to(np.asarray(lam, dtype=np.float64), (n,)).copy()
    return ScmInstance(B, lam, sigma2, perm.astype(np.int64))


def generate_dag_with_edges(
    n: int, n_edges: int, weight_range=(0.5, 2.0), rng: np.random.Generator | None = None
) -> ScmInstance:
    """Random DAG with exactly ``n_edges`` edges placed uniformly among forward pairs."""
    rng = rng or np.random.default_rng()
    pairs = [(a, b) for a in range(n) for b in range(a + 1, n)]
    if n_edges > len(pairs):
        raise ContractError("too many edges for a DAG on n nodes")
    perm = rng.permutation(n)
    B = np.zeros((n, n))
    for idx in rng.choice(len(pairs), size=n_edges, replace=False):
        a, b = pairs[idx]
        B[perm[a], perm[b]] = rng.uniform(*weight_range) * rng.choice((-1.0, 1.0))
    return ScmInstance(B, np.ones(n), 1.0, perm.astype(np.int64))


def sample_scm(inst: ScmInstance, N: int, rng: np.random.Generator, noise: str = "gaussian") -> np.ndarray:
    """N samples by forward substitution along the topological order."""
    if noise != "gaussian":
        raise ContractError("only gaussian noise is supported")
    U = rng.standard_normal((N, inst.n)) * np.sqrt(inst.sigma2)
    return sample_from_noise(inst, U)


def sample_from_noise(inst: ScmInstance, U: np.ndarray) -> np.ndarray:
    return kernels.forward_substitute(
        np.ascontiguousarray(inst.B),
        np.ascontiguousarray(inst.lam),
        np.ascontiguousarray(U, dtype=np.float64),
        np.ascontiguousarray(inst.order),
    )


def dense_sample(inst: ScmInstance, U: np.ndarray) -> np.ndarray:
    """Reference path through an explicit inverse: rows of ((I - B^T)^{-1} Lambda u^T)^T."""
    mix = np.linalg.inv(np.eye(inst.n) - inst.B.T) @ np.diag(inst.lam)
    return U @ mix.T


def closed_form_cov(inst: ScmInstance) -> np.ndarray:
    """(I - B^T)^{-1} Lambda sigma^2 I Lambda (I - B^T)^{-T}."""
    mix = np.linalg.solve(np.eye(inst.n) - inst.B.T, np.diag(inst.lam))
    return inst.sigma2 * mix @ mix.T


def gaussian_cov_se(cov: np.ndarray, N: int) -> np.ndarray:
    """Monte-Carlo standard error of each sample-covariance entry for zero-mean Gaussians."""
    d = np.diag(cov)
    return np.sqrt((np.outer(d, d) + cov * cov) / N)


@dataclass
class CovCheck:
    empirical: np.ndarray
    predicted: np.ndarray
    se: np.ndarray

    @property
    def z(self) -> np.ndarray:
        return np.abs(self.empirical - self.predicted) / self.se

    def fraction_within(self, k: float = 5.0) -> float:
        return float((self.z <= k).mean())

    @property
    def max_abs_error(self) -> float:
        return float(np.abs(self.empirical - self.predicted).max())


def empirical_cov(X: np.ndarray) -> np.ndarray:
    Xc = X - X.mean(axis=0)
    return Xc.T @ Xc / (X.shape[0] - 1)


def scm_cov_check(inst: ScmInstance, N: int, rng) -> CovCheck:
    X = sample_scm(inst, N, rng)
    pred = closed_form_cov(inst)
    return CovCheck(empirical_cov(X), pred, gaussian_cov_se(pred, N))


def attention_cov_check(A: np.ndarray, V_samples: np.ndarray, cov_v: np.ndarray | None = None) -> CovCheck:
    """Compare Cov(A v) over samples against A Cov(V) A^T.

    ``V_samples`` is [N, n] (one value per position per sample). With
    ``cov_v`` given the prediction uses the known covariance, otherwise the
    sample covariance of V.
    """
    A = np.asarray(A, dtype=np.float64)
    V = np.asarray(V_samples, dtype=np.float64)
    Z = V @ A.T
    cv = empirical_cov(V) if cov_v is None else np.asarray(cov_v, dtype=np.float64)
    pred = A @ cv @ A.T
    return CovCheck(empirical_cov(Z), pred, gaussian_cov_se(pred, V.shape[0]))


# --- exhaustive identification ---------------------------------------------------------


@lru_cache(maxsize=None)
def _all_dags(n: int) -> np.ndarray:
    offdiag = [(i, j) for i in range(n) for j in range(n) if i != j]
    out = []
    for bits in itertools.product((0, 1), repeat=len(offdiag)):
        adj = np.zeros((n, n), dtype=np.int8)
        for (i, j), b in zip(offdiag, bits):
            adj[i, j] = b
        if is_dag(adj):
            out.append(adj)
    return np.ascontiguousarray(np.stack(out))


def enumerate_dags(n: int) -> np.ndarray:
    """All labelled DAGs on n nodes as int8 adjacency [K, n, n] (25 at n=3, 543 at n=4)."""
    if n > 4:
        raise ContractError("exhaustive enumeration is limited to n <= 4")
    return _all_dags(n).copy()


def shd(a, b) -> int:
    """Structural Hamming distance; a reversed edge counts once."""
    a = np.asarray(a) != 0
    b = np.asarray(b) != 0
    n = a.shape[0]
    d = 0
    for i in range(n):
        for j in range(i + 1, n):
            if (a[i, j], a[j, i]) != (b[i, j], b[j, i]):
                d += 1
    return d


@dataclass
class IdentifiabilityResult:
    true_graph: np.ndarray | None
    recovered: np.ndarray
    shd: int | None
    scores: np.ndarray
    candidates: np.ndarray = field(repr=False)

    def ranked(self):
        idx = np.argsort(-self.scores, kind="stable")
        return [(self.candidates[k], float(self.scores[k])) for k in idx]


def equal_variance_scores(cov: np.ndarray, N: int, candidates: np.ndarray, penalty: str = "bic") -> np.ndarray:
    """Profile log-likelihood of each DAG under a shared noise variance.

    Every node is regressed on its parents; sigma^2 is the pooled residual
    variance. ``penalty="bic"`` subtracts (log N / 2) per edge so that
    supergraphs of the truth do not win on sampling noise alone.
    """
    n = cov.shape[0]
    rss = kernels.dag_rss(np.ascontiguousarray(cov), np.ascontiguousarray(candidates))
    sigma2 = np.maximum(rss.sum(axis=1) / n, 1e-300)
    ll = -0.5 * N * n * (np.log(2 * np.pi * sigma2) + 1.0)
    if penalty == "bic":
        ll = ll - 0.5 * np.log(N) * candidates.reshape(len(candidates), -1).sum(axis=1)
    elif penalty != "none":
        raise ContractError(f"unknown penalty {penalty!r}")
    return ll


def brute_force_identify(
    data: np.ndarray | None = None,
    true_graph=None,
    *,
    cov: np.ndarray | None = None,
    N: int | None = None,
    penalty: str = "bic",
) -> IdentifiabilityResult:
    """Best-scoring DAG over all candidates under the equal-variance Gaussian score.

    Pass either ``data`` [N, n] or a covariance with its sample size.
    """
    if cov is None:
        if data is None:
            raise ContractError("need data or a covariance")
        N = data.shape[0]
        Xc = data - data.mean(axis=0)
        cov = Xc.T @ Xc / N
    elif N is None:
        raise ContractError("a covariance input needs its sample size N")
    n = cov.shape[0]
    cands = enumerate_dags(n)
    scores = equal_variance_scores(np.asarray(cov, dtype=np.float64), N, cands, penalty)
    best = cands[int(np.argmax(scores))]
    d = None if true_graph is None else shd(best, true_graph)
    return IdentifiabilityResult(true_graph, best, d, scores, cands)


def two_node_tie_instance(b: float = 0.6) -> ScmInstance:
    """x1 -> x2 with noise scales chosen so both orientations score identically.

    With lam1 = 1 and lam2 = sqrt(1 - b^2) both variables have unit variance,
    so the covariance is symmetric under swapping the two nodes.
    """
    if not 0 < abs(b) < 1:
        raise ContractError("|b| must be in (0, 1)")
    return ScmInstance(np.array([[0.0, b], [0.0, 0.0]]), np.array([1.0, np.sqrt(1 - b * b)]))


# --- continuous recovery -------------------------------------------------------------


@dataclass
class RecoveryResult:
    W: np.ndarray
    support: np.ndarray
    h: float
    converged: bool
    rounds: int
    rho: float


def notears_recover(
    X: np.ndarray,
    lambda_l1: float = 0.01,
    *,
    max_rounds: int = 100,
    h_tol: float = 1e-8,
    converge_tol: float = 1e-4,
    threshold: float = 0.3,
    rho_max: float = 1e16,
    gamma1: float = 10.0,
    gamma2: float = 0.25,
) -> RecoveryResult:
    """Least squares + L1 under the trace-exponential acyclicity constraint.

    Each round minimises ``0.5/N ||X - X W||^2 + lambda |W|_1 + rho/2 h^2 +
    beta h`` with L-BFGS-B (W split into non-negative parts, diagonal pinned
    to zero), then applies the epoch-end multiplier update from the causal
    module with kappa = h(W).
    """
    X = np.asarray(X, dtype=np.float64)
    N, d = X.shape
    X = X - X.mean(axis=0)
    state = CausalState(n=d, rho=1.0, gamma1=gamma1, gamma2=gamma2, rho_max=rho_max)
    w = np.zeros(2 * d * d)
    bounds = [(0, 0) if i == j else (0, None) for _ in range(2) for i in range(d) for j in range(d)]

    def unpack(v):
        return (v[: d * d] - v[d * d :]).reshape(d, d)

    def objective(v, rho, beta):
        W = unpack(v)
        R = X - X @ W
        loss = 0.5 / N * (R * R).sum()
        g_loss = -1.0 / N * X.T @ R
        E = expm_array(W * W)
        h = np.trace(E) - d
        g_h = E.T * W * 2
        obj = loss + 0.5 * rho * h * h + beta * h + lambda_l1 * v.sum()
        g = g_loss + (rho * h + beta) * g_h
        return obj, np.concatenate([g + lambda_l1, -g + lambda_l1])

    h = np.inf
    rounds = 0
    for rounds in range(1, max_rounds + 1):
        sol = sopt.minimize(objective, w, args=(state.rho, state.beta_mult), method="L-BFGS-B", jac=True, bounds=bounds)
        w = sol.x
        h = float(acyclicity_penalty(unpack(w)).data)
        if h <= h_tol or state.rho >= rho_max:
            break
        state = update_multipliers(state, [h])
    W = unpack(w)
    W[np.abs(W) < threshold] = 0.0
    return RecoveryResult(W, (W != 0).astype(np.int8), h, h <= converge_tol, rounds, state.rho)


# --- trial runners ---------------------------------------------------------------------

TRIAL_HEADER = "seed,n,SHD,h_final,converged"


def identify_trial(seed: int, n: int = 3, N: int = 10_000, edge_prob: float = 0.5) -> tuple[int, int]:
    from .rng import stream

    rng = stream(seed, "scmlab", 0)
    inst = generate_random_dag(n, edge_prob, rng=rng)
    X = sample_scm(inst, N, rng)
    res = brute_force_identify(X, inst.support)
    return res.shd, n


def notears_trial(seed: int, n: int = 5, n_edges: int = 8, N: int = 10_000, lambda_l1: float = 0.01):
    from .rng import stream

    rng = stream(seed, "scmlab", 1)
    inst = generate_dag_with_edges(n, n_edges, rng=rng)
    X = sample_scm(inst, N, rng)
    res = notears_recover(X, lambda_l1)
    return inst, res, shd(res.support, inst.support)


def trial_row(seed: int, n: int, d: int, h: float, converged: bool) -> str:
    return f"{seed},{n},{d},{h!r},{int(converged)}"
