"""CausalRec network: embedding layer, stacked CausalBoost attention layers, dot-product head.

Sequences are left-padded item-index arrays (0 = padding) of shape [n] or
[B, n]. Attention uses an attend-to-past prefix mask that also hides padding
keys, so padding query rows are fully masked and yield zero attention output.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DimensionError
from .numerics import Tensor, ops

ATTENTION_MODES = ("boost", "plain", "filter", "causal_only")


@dataclass
class ModelConfig:
    n_items: int
    n_max: int = 200
    hidden: int = 64
    d_k: int | None = None
    d_v: int | None = None
    layers: int = 2
    dropout: float = 0.2
    alpha: float = 1.0
    attention: str = "boost"
    filter_threshold: float = 0.9
    value_norm: bool = False
    ln_eps: float = 1e-8

    def __post_init__(self):
        if self.d_k is None:
            self.d_k = self.hidden
        if self.d_v is None:
            self.d_v = self.hidden
        if self.layers < 1 or min(self.hidden, self.d_k, self.d_v, self.n_max, self.n_items) < 1:
            raise ContractError("layers, dimensions, n_max and n_items must all be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ContractError("dropout must be in [0, 1)")
        if self.alpha < 0:
            raise ContractError("alpha must be non-negative")
        if self.attention not in ATTENTION_MODES:
            raise ContractError(f"attention must be one of {ATTENTION_MODES}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def init_params(config: ModelConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    """Uniform(-1/sqrt(D), 1/sqrt(D)) projections and embeddings; LayerNorm at (1, 0)."""
    D, dk, dv = config.hidden, config.d_k, config.d_v
    bound = 1.0 / math.sqrt(D)

    def uni(*shape):
        return rng.uniform(-bound, bound, size=shape)

    params: dict[str, np.ndarray] = {}
    item = uni(config.n_items + 1, D)
    item[0] = 0.0
    params["item_emb"] = item
    params["pos_emb"] = uni(config.n_max, D)
    for l in range(config.layers):
        p = f"layers.{l}."
        params[p + "wq"] = uni(D, dk)
        params[p + "wk"] = uni(D, dk)
        params[p + "wv"] = uni(D, dv)
        params[p + "wo"] = np.eye(D) if dv == D else uni(dv, D)
        params[p + "w1"] = uni(D, D)
        params[p + "b1"] = np.zeros(D)
        params[p + "w2"] = uni(D, D)
        params[p + "b2"] = np.zeros(D)
        params[p + "ln_g"] = np.ones(D)
        params[p + "ln_b"] = np.zeros(D)
    return {k: Tensor(v, requires_grad=True, name=k) for k, v in params.items()}


def prefix_keep(items: np.ndarray) -> np.ndarray:
    """Boolean [..., n, n]: query x may attend key y iff y <= x and y is a real item."""
    n = items.shape[-1]
    past = np.tril(np.ones((n, n), dtype=bool))
    return past & (np.asarray(items) != 0)[..., None, :]


def embed_sequence(items, params, p: float = 0.0, training: bool = False, rng=None) -> Tensor:
    items = np.asarray(items)
    M, P = params["item_emb"], params["pos_emb"]
    if items.shape[-1] != P.shape[0]:
        raise DimensionError(f"sequence length {items.shape[-1]} != n_max {P.shape[0]}")
    if items.size and (items.min() < 0 or items.max() >= M.shape[0]):
        raise ContractError("item index outside the vocabulary")
    return ops.dropout(ops.take_rows(M, items) + P, p, training, rng)


def attention_logits(X, params, layer: int) -> Tensor:
    wq, wk = params[f"layers.{layer}.wq"], params[f"layers.{layer}.wk"]
    Q = ops.matmul(X, wq)
    K = ops.matmul(X, wk)
    return ops.mul(ops.matmul(Q, ops.transpose(K)), 1.0 / math.sqrt(wq.shape[1]))


def causal_boost(logits, R, alpha: float) -> Tensor:
    """A * (1 + alpha R) on pre-softmax logits; R is treated as a constant."""
    R = np.asarray(R.data if isinstance(R, Tensor) else R, dtype=np.float64)
    if R.shape[-2:] != logits.shape[-2:]:
        raise DimensionError(f"R shape {R.shape} does not match logits {logits.shape}")
    return ops.mul(logits, 1.0 + alpha * R)


def filter_attention(logits, R, threshold: float = 0.9, keep=None) -> Tensor:
    """softmax(A + M_R): entries with R <= threshold are removed before softmax."""
    R = np.asarray(R.data if isinstance(R, Tensor) else R, dtype=np.float64)
    allowed = R > threshold
    if keep is not None:
        allowed = allowed & keep
    return ops.softmax_rows(ops.masked(logits, allowed))


def relation_weights(R, keep) -> np.ndarray:
    """Attention weights from R alone: uniform over R=1 keys inside the mask.

    Rows with no permitted R=1 key fall back to uniform over the mask; fully
    masked rows are zero.
    """
    R = np.asarray(R, dtype=np.float64)
    keep = np.asarray(keep, dtype=bool)
    hits = np.where(keep, (R != 0).astype(np.float64), 0.0)
    base = np.where(hits.sum(axis=-1, keepdims=True) > 0, hits, keep.astype(np.float64))
    total = base.sum(axis=-1, keepdims=True)
    return np.divide(base, total, out=np.zeros_like(base), where=total > 0)


def cba_layer_forward(X, R, params, layer: int, config: ModelConfig, keep, training=False, rng=None):
    """One CausalBoost attention layer followed by the point-wise FFN sublayer.

    Returns the layer output and a dict of read-only attention artifacts.
    """
    p = f"layers.{layer}."
    V = ops.matmul(X, params[p + "wv"])
    if config.value_norm:
        d_v = V.shape[-1]
        V = ops.layer_norm(V, np.ones(d_v), np.zeros(d_v), config.ln_eps)

    mode = config.attention
    if mode == "causal_only":
        logits = boosted = None
        weights = Tensor(relation_weights(R, keep))
    else:
        logits = attention_logits(X, params, layer)
        if mode == "plain":
            boosted = logits
            weights = ops.softmax_rows(ops.masked(logits, keep))
        elif mode == "boost":
            boosted = causal_boost(logits, R, config.alpha)
            weights = ops.softmax_rows(ops.masked(boosted, keep))
        else:
            boosted = logits
            weights = filter_attention(logits, R, config.filter_threshold, keep)

    Z = ops.matmul(ops.matmul(weights, V), params[p + "wo"])
    hidden = ops.relu(ops.add(ops.matmul(Z, params[p + "w1"]), params[p + "b1"]))
    ffn = ops.add(ops.matmul(hidden, params[p + "w2"]), params[p + "b2"])
    out = ops.layer_norm(
        ops.add(X, ops.dropout(ffn, config.dropout, training, rng)),
        params[p + "ln_g"],
        params[p + "ln_b"],
        config.ln_eps,
    )
    artifacts = {
        "logits": None if logits is None else logits.data,
        "boosted": None if boosted is None else boosted.data,
        "weights": weights.data,
    }
    return out, artifacts


def forward(params, config: ModelConfig, items, R=None, training=False, rng=None):
    """Final-layer representations [..., n, D] and per-layer attention artifacts."""
    items = np.asarray(items, dtype=np.int64)
    if R is None:
        R = np.zeros((config.n_max, config.n_max))
    keep = prefix_keep(items)
    X = embed_sequence(items, params, config.dropout, training, rng)
    artifacts = []
    for l in range(config.layers):
        X, art = cba_layer_forward(X, R, params, l, config, keep, training, rng)
        artifacts.append(art)
    return X, artifacts


def gather_scores(params, reprs, candidates) -> Tensor:
    """Dot product of each representation with candidate item embeddings.

    ``reprs`` is [..., D]; ``candidates`` is an integer array [..., C] with the
    same leading shape. Returns [..., C].
    """
    emb = ops.take_rows(params["item_emb"], candidates)
    r = ops.reshape(reprs, reprs.shape[:-1] + (1, reprs.shape[-1]))
    return ops.sum(ops.mul(emb, r), axis=-1)


def predict_scores(final_repr, params, position: int, items) -> np.ndarray:
    """Scores of every item at ``position``; index 0 (padding) is set to -inf."""
    items = np.asarray(items)
    if items[position] == 0:
        raise ContractError(f"position {position} holds padding")
    h = final_repr.data[position] if isinstance(final_repr, Tensor) else np.asarray(final_repr)[position]
    scores = params["item_emb"].data @ h
    scores[0] = -np.inf
    return scores


class CausalRec:
    """Configuration plus parameters, with convenience forward helpers."""

    def __init__(self, config: ModelConfig, params: dict[str, Tensor] | None = None, rng=None):
        self.config = config
        if params is None:
            if rng is None:
                raise ContractError("need an rng to initialise parameters")
            params = init_params(config, rng)
        self.params = params

    def forward(self, items, R=None, training=False, rng=None):
        return forward(self.params, self.config, items, R, training, rng)

    def last_scores(self, items, candidates, R=None) -> np.ndarray:
        """Eval-mode scores of ``candidates`` [B, C] at the last position of ``items`` [B, n]."""
        H, _ = self.forward(items, R, training=False)
        return gather_scores(self.params, H[:, -1, :], candidates).data

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.zero_grad()
