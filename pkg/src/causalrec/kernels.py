"""Hot numeric kernels.

Each kernel exists twice: a vectorised numpy version and an explicit-loop
version compiled with numba. Both compute the same quantity; results agree to
rounding but are not bit-identical to each other, so a given run uses one
path throughout (see ``causalrec._accel``).

Kernels work on float64, C-contiguous arrays.
"""

from __future__ import annotations

import numpy as np

from ._accel import HAVE_NUMBA, USE_NUMBA, njit

EXPM_TERMS = 14
EXPM_TARGET_NORM = 0.5


# --- masked softmax over rows -------------------------------------------------


def softmax_rows_np(x):
    mx = x.max(axis=1, keepdims=True)
    dead = np.isneginf(mx)
    e = np.exp(x - np.where(dead, 0.0, mx))
    s = e.sum(axis=1, keepdims=True)
    s[dead] = 1.0
    return e / s


def _softmax_rows_loop(x):
    m, n = x.shape
    out = np.zeros((m, n))
    for i in range(m):
        mx = -np.inf
        for j in range(n):
            if x[i, j] > mx:
                mx = x[i, j]
        if mx == -np.inf:
            continue
        s = 0.0
        for j in range(n):
            e = np.exp(x[i, j] - mx)
            out[i, j] = e
            s += e
        for j in range(n):
            out[i, j] /= s
    return out


def softmax_rows_grad_np(y, g):
    return y * (g - (y * g).sum(axis=1, keepdims=True))


def _softmax_rows_grad_loop(y, g):
    m, n = y.shape
    out = np.empty((m, n))
    for i in range(m):
        dot = 0.0
        for j in range(n):
            dot += y[i, j] * g[i, j]
        for j in range(n):
            out[i, j] = y[i, j] * (g[i, j] - dot)
    return out


# --- layer norm -----------------------------------------------------------------


def layer_norm_np(x, gamma, beta, eps):
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    return xhat * gamma + beta, xhat, rstd[:, 0]


def _layer_norm_loop(x, gamma, beta, eps):
    m, d = x.shape
    y = np.empty((m, d))
    xhat = np.empty((m, d))
    rstd = np.empty(m)
    for i in range(m):
        mu = 0.0
        for j in range(d):
            mu += x[i, j]
        mu /= d
        var = 0.0
        for j in range(d):
            c = x[i, j] - mu
            var += c * c
        var /= d
        r = 1.0 / np.sqrt(var + eps)
        rstd[i] = r
        for j in range(d):
            h = (x[i, j] - mu) * r
            xhat[i, j] = h
            y[i, j] = h * gamma[j] + beta[j]
    return y, xhat, rstd


def layer_norm_grad_np(g, xhat, rstd, gamma):
    dxhat = g * gamma
    dx = rstd[:, None] * (
        dxhat - dxhat.mean(axis=1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=1, keepdims=True)
    )
    return dx, (g * xhat).sum(axis=0), g.sum(axis=0)


def _layer_norm_grad_loop(g, xhat, rstd, gamma):
    m, d = g.shape
    dx = np.empty((m, d))
    dgamma = np.zeros(d)
    dbeta = np.zeros(d)
    for i in range(m):
        s1 = 0.0
        s2 = 0.0
        for j in range(d):
            dh = g[i, j] * gamma[j]
            s1 += dh
            s2 += dh * xhat[i, j]
            dgamma[j] += g[i, j] * xhat[i, j]
            dbeta[j] += g[i, j]
        s1 /= d
        s2 /= d
        for j in range(d):
            dx[i, j] = rstd[i] * (g[i, j] * gamma[j] - s1 - xhat[i, j] * s2)
    return dx, dgamma, dbeta


# --- matrix exponential -----------------------------------------------------------


def expm_np(a):
    n = a.shape[0]
    norm = np.abs(a).sum(axis=0).max() if n else 0.0
    s = 0
    if norm > EXPM_TARGET_NORM:
        s = int(np.ceil(np.log2(norm / EXPM_TARGET_NORM)))
    a = a / (2.0**s)
    eye = np.eye(n)
    out = eye.copy()
    term = eye
    for k in range(1, EXPM_TERMS + 1):
        term = term @ a / k
        out = out + term
    for _ in range(s):
        out = out @ out
    return out


def _expm_loop(a):
    n = a.shape[0]
    norm = 0.0
    for j in range(n):
        c = 0.0
        for i in range(n):
            c += abs(a[i, j])
        if c > norm:
            norm = c
    s = 0
    if norm > EXPM_TARGET_NORM:
        s = int(np.ceil(np.log2(norm / EXPM_TARGET_NORM)))
    a = a / (2.0**s)
    out = np.eye(n)
    term = np.eye(n)
    for k in range(1, EXPM_TERMS + 1):
        term = np.dot(term, a) / k
        out = out + term
    for _ in range(s):
        out = np.dot(out, out)
    return out


# --- ranking --------------------------------------------------------------------


def pessimistic_ranks_np(scores):
    """Rank of column 0 among each row; ties count against it."""
    return 1 + (scores[:, 1:] >= scores[:, :1]).sum(axis=1)


def _pessimistic_ranks_loop(scores):
    m, c = scores.shape
    out = np.empty(m, dtype=np.int64)
    for i in range(m):
        gt = scores[i, 0]
        r = 1
        for j in range(1, c):
            if scores[i, j] >= gt:
                r += 1
        out[i] = r
    return out


# --- linear SCM sampling -----------------------------------------------------------


def forward_substitute_np(b, lam, u, order):
    x = np.zeros_like(u)
    for j in order:
        x[:, j] = x @ b[:, j] + lam[j] * u[:, j]
    return x


def _forward_substitute_loop(b, lam, u, order):
    m, n = u.shape
    x = np.zeros((m, n))
    for s in range(m):
        for jj in range(n):
            j = order[jj]
            acc = lam[j] * u[s, j]
            for i in range(n):
                if b[i, j] != 0.0:
                    acc += x[s, i] * b[i, j]
            x[s, j] = acc
    return x


# --- equal-variance DAG scoring ------------------------------------------------------


def dag_rss_np(cov, adj):
    """Residual variance of every node given its parents, for each candidate DAG.

    ``adj[k, i, j] == 1`` means edge i -> j in candidate k.
    """
    k_count, n, _ = adj.shape
    out = np.empty((k_count, n))
    for k in range(k_count):
        for j in range(n):
            pa = np.flatnonzero(adj[k, :, j])
            if pa.size == 0:
                out[k, j] = cov[j, j]
            else:
                s_pj = cov[pa, j]
                coef = np.linalg.solve(cov[np.ix_(pa, pa)], s_pj)
                out[k, j] = cov[j, j] - s_pj @ coef
    return out


def _dag_rss_loop(cov, adj):
    k_count, n, _ = adj.shape
    out = np.empty((k_count, n))
    for k in range(k_count):
        for j in range(n):
            p = 0
            for i in range(n):
                if adj[k, i, j] != 0:
                    p += 1
            if p == 0:
                out[k, j] = cov[j, j]
                continue
            pa = np.empty(p, dtype=np.int64)
            q = 0
            for i in range(n):
                if adj[k, i, j] != 0:
                    pa[q] = i
                    q += 1
            spp = np.empty((p, p))
            spj = np.empty(p)
            for a in range(p):
                spj[a] = cov[pa[a], j]
                for c in range(p):
                    spp[a, c] = cov[pa[a], pa[c]]
            coef = np.linalg.solve(spp, spj)
            acc = cov[j, j]
            for a in range(p):
                acc -= spj[a] * coef[a]
            out[k, j] = acc
    return out


# --- embedding gradient -----------------------------------------------------------


def scatter_rows_np(index, grads, n_rows):
    out = np.zeros((n_rows, grads.shape[1]))
    np.add.at(out, index, grads)
    return out


def _scatter_rows_loop(index, grads, n_rows):
    out = np.zeros((n_rows, grads.shape[1]))
    for r in range(index.shape[0]):
        row = index[r]
        for d in range(grads.shape[1]):
            out[row, d] += grads[r, d]
    return out


NUMPY_KERNELS = {
    "softmax_rows": softmax_rows_np,
    "softmax_rows_grad": softmax_rows_grad_np,
    "layer_norm": layer_norm_np,
    "layer_norm_grad": layer_norm_grad_np,
    "expm": expm_np,
    "pessimistic_ranks": pessimistic_ranks_np,
    "forward_substitute": forward_substitute_np,
    "dag_rss": dag_rss_np,
    "scatter_rows": scatter_rows_np,
}

LOOP_KERNELS = {
    "softmax_rows": _softmax_rows_loop,
    "softmax_rows_grad": _softmax_rows_grad_loop,
    "layer_norm": _layer_norm_loop,
    "layer_norm_grad": _layer_norm_grad_loop,
    "expm": _expm_loop,
    "pessimistic_ranks": _pessimistic_ranks_loop,
    "forward_substitute": _forward_substitute_loop,
    "dag_rss": _dag_rss_loop,
    "scatter_rows": _scatter_rows_loop,
}

_JITTED: dict = {}


def jitted(name):
    """Numba-compiled version of kernel ``name`` (compiled on first use)."""
    if name not in _JITTED:
        _JITTED[name] = njit(LOOP_KERNELS[name])
    return _JITTED[name]


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"


def get(name):
    return jitted(name) if USE_NUMBA else NUMPY_KERNELS[name]


softmax_rows = get("softmax_rows")
softmax_rows_grad = get("softmax_rows_grad")
layer_norm = get("layer_norm")
layer_norm_grad = get("layer_norm_grad")
expm = get("expm")
pessimistic_ranks = get("pessimistic_ranks")
forward_substitute = get("forward_substitute")
dag_rss = get("dag_rss")
scatter_rows = get("scatter_rows")

__all__ = ["HAVE_NUMBA", "USE_NUMBA", "backend", "get", "jitted", *NUMPY_KERNELS]
