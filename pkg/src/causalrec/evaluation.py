"""Ranking evaluation under sampled negatives, plus causal explanation reports."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels, rng as rngmod
from .dataio import PaddedSequence, SplitDataset
from .errors import ContractError, MetricError
from .model import CausalRec
from .training import sample_negatives


@dataclass
class MetricsReport:
    hr: float
    ndcg: float
    Z: int
    users_evaluated: int
    negatives_per_user: int
    skipped: int = 0

    def to_line(self) -> str:
        return (
            f"HR@{self.Z}={self.hr!r} NDCG@{self.Z}={self.ndcg!r} Z={self.Z} "
            f"users_evaluated={self.users_evaluated} negatives_per_user={self.negatives_per_user} "
            f"skipped={self.skipped}"
        )

    def csv_row(self, dataset: str, variant: str, seed: int) -> str:
        return f"{dataset},{variant},{self.hr!r},{self.ndcg!r},{seed}"


CSV_HEADER = "dataset,variant,HR@10,NDCG@10,seed"


def pessimistic_rank(scores: np.ndarray) -> np.ndarray:
    """1 + number of candidates scoring >= the ground truth in column 0."""
    scores = np.ascontiguousarray(np.atleast_2d(scores), dtype=np.float64)
    return kernels.pessimistic_ranks(scores)


def rank_candidates(model: CausalRec, seq: PaddedSequence, ground_truth: int, negatives, R=None) -> int:
    negatives = np.asarray(negatives, dtype=np.int64)
    if ground_truth in set(negatives.tolist()):
        raise ContractError("ground truth appears among the negatives")
    cands = np.concatenate([[ground_truth], negatives])[None, :]
    scores = model.last_scores(seq.items[None, :], cands, R)
    return int(pessimistic_rank(scores)[0])


def _check(ranks, Z: int) -> np.ndarray:
    ranks = np.asarray(ranks)
    if ranks.size == 0:
        raise MetricError("metric undefined over an empty user set")
    if Z < 1:
        raise ContractError("Z must be >= 1")
    return ranks


def hit_rate(ranks, Z: int = 10) -> float:
    ranks = _check(ranks, Z)
    return float(np.mean(ranks <= Z))


def dcg(ranks, Z: int = 10) -> np.ndarray:
    ranks = np.asarray(ranks)
    return np.where(ranks <= Z, 1.0 / np.log2(ranks + 1.0), 0.0)


def ndcg(ranks, Z: int = 10, mode: str = "ideal") -> float:
    """Mean normalised DCG for single-relevant-item users.

    ``mode="ideal"`` divides each user's DCG by its own ideal (1);
    ``mode="max_user"`` divides by the largest DCG observed over users.
    """
    ranks = _check(ranks, Z)
    gains = dcg(ranks, Z)
    mean = math.fsum(gains.tolist()) / gains.size
    if mode == "ideal":
        return mean
    if mode == "max_user":
        top = float(gains.max())
        return mean / top if top > 0 else 0.0
    raise ContractError(f"unknown ndcg mode {mode!r}")


def draw_eval_candidates(data: SplitDataset, split: str, negatives: int, seed: int):
    """Deterministic (user, input, candidates) triples; ground truth is column 0."""
    rng = rngmod.stream(seed, "eval", 0 if split == "valid" else 1)
    users, inputs, cands = [], [], []
    skipped = 0
    for u in range(len(data.users)):
        got = data.eval_input(u, split)
        if got is None:
            skipped += 1
            continue
        seq, target = got
        neg = sample_negatives(data.history(u), data.n_items, negatives, rng, replace=False)
        users.append(u)
        inputs.append(seq.items)
        cands.append(np.concatenate([[target], neg]))
    return users, inputs, cands, skipped


def evaluate(
    model: CausalRec,
    data: SplitDataset,
    R=None,
    Z: int = 10,
    negatives: int = 100,
    seed: int = 0,
    split: str = "test",
    ndcg_mode: str = "ideal",
    batch_size: int = 256,
) -> MetricsReport:
    users, inputs, cands, skipped = draw_eval_candidates(data, split, negatives, seed)
    if not users:
        raise MetricError(f"no users with a {split} item")
    ranks = []
    for start in range(0, len(users), batch_size):
        x = np.stack(inputs[start : start + batch_size])
        c = np.stack(cands[start : start + batch_size])
        ranks.append(pessimistic_rank(model.last_scores(x, c, R)))
    ranks = np.concatenate(ranks)
    return MetricsReport(hit_rate(ranks, Z), ndcg(ranks, Z, ndcg_mode), Z, len(users), negatives, skipped)


@dataclass
class ExplanationRecord:
    user: str
    target: str | None
    recommendations: list[str]
    edges: list[tuple[int, str, int, float]] = field(default_factory=list)

    def to_text(self) -> str:
        lines = [f"user {self.user}", f"  target: {self.target if self.target is not None else '-'}"]
        lines.append("  recommended: " + (", ".join(self.recommendations) or "-"))
        if not self.edges:
            lines.append("  causal edges: none")
        for src_pos, src_item, dst_pos, w in self.edges:
            lines.append(f"  edge pos {src_pos} ({src_item}) -> pos {dst_pos}  W={w:.6g}")
        return "\n".join(lines) + "\n"


def top_edges(W: np.ndarray, R: np.ndarray, items: np.ndarray, top_k: int) -> list[tuple[int, int, float]]:
    """Highest-|W| edges with R = 1 from real positions into the last position."""
    last = len(items) - 1
    src = [j for j in range(last) if R[last, j] != 0 and items[j] != 0]
    src.sort(key=lambda j: (-abs(W[last, j]), j))
    return [(j, last, float(W[last, j])) for j in src[:top_k]]


def explain(
    model: CausalRec,
    state,
    seq: PaddedSequence,
    top_k: int = 5,
    data: SplitDataset | None = None,
    target: int | None = None,
    n_recommend: int = 10,
) -> ExplanationRecord:
    """Top-scoring items for ``seq`` plus the strongest causal edges into its last position."""
    vocab = data.vocab.items if data is not None else None

    def name(i: int) -> str:
        return vocab[i] if vocab is not None else str(int(i))

    H, _ = model.forward(seq.items, state.R, training=False)
    scores = model.params["item_emb"].data @ H.data[-1]
    scores[0] = -np.inf
    seen = set(int(i) for i in seq.items if i)
    ranked = [int(i) for i in np.argsort(-scores, kind="stable") if i != 0 and int(i) not in seen][:n_recommend]
    edges = [
        (s, name(int(seq.items[s])), d, w) for s, d, w in top_edges(state.W, state.R, seq.items, top_k)
    ]
    user = data.users[seq.user_index] if data is not None else str(seq.user_index)
    return ExplanationRecord(user, None if target is None else name(target), [name(i) for i in ranked], edges)
