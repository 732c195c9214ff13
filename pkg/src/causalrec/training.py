"""Loss assembly, negative sampling, Adam, and the epoch driver."""

from __future__ import annotations

import dataclasses
import json
import math
import os
from dataclasses import dataclass, field
from typing import Callable, TextIO

import numpy as np

from . import checkpoint, rng as rngmod
from .causal import CausalState, batch_covariance, dag_loss, l1_penalty
from .dataio import SplitDataset
from .errors import ContractError, NumericError, SamplingError
from .model import CausalRec, ModelConfig, gather_scores
from .numerics import Tape, Tensor, ops

VARIANTS = ("full", "no_causality", "no_sparse", "no_attention", "filter")


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 256
    epochs: int = 20
    lam: float = 1e-3
    alpha: float = 1.0
    seed: int = 0
    ablation: str = "full"
    tau: float = 0.3
    rho0: float = 1.0
    gamma1: float = 10.0
    gamma2: float = 0.25
    rho_max: float = 1e4
    freeze_causal: bool = False
    checkpoint_every: int = 0
    eval_every: int = 0
    eval_negatives: int = 100

    def __post_init__(self):
        if self.ablation not in VARIANTS:
            raise ContractError(f"ablation must be one of {VARIANTS}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ContractError("batch_size must be >= 1 and epochs >= 0")

    @property
    def effective_lambda(self) -> float:
        return 0.0 if self.ablation == "no_sparse" else self.lam


def variant_model_config(base: ModelConfig, cfg: TrainConfig) -> ModelConfig:
    """Model config for ``cfg.ablation`` (alpha taken from the train config)."""
    if base.attention == "plain":
        return dataclasses.replace(base, alpha=0.0)
    attention = {"no_attention": "causal_only", "filter": "filter"}.get(cfg.ablation, "boost")
    alpha = 0.0 if cfg.ablation == "no_causality" else cfg.alpha
    return dataclasses.replace(base, attention=attention, alpha=alpha)


@dataclass
class StepRecord:
    epoch: int
    step: int
    L_rec: float
    L_L1: float
    L_DAG: float
    total: float
    h_mean: float
    grad_norm: float

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self))


def sample_negatives(seq, n_items: int, count: int, rng: np.random.Generator, replace: bool = True) -> np.ndarray:
    """Uniform item indices from 1..n_items that do not occur in ``seq``."""
    if count < 1:
        raise ContractError("count must be >= 1")
    candidates = np.setdiff1d(np.arange(1, n_items + 1), np.asarray(list(seq), dtype=np.int64))
    if candidates.size == 0 or (not replace and candidates.size < count):
        raise SamplingError(f"only {candidates.size} items available for {count} negatives")
    return rng.choice(candidates, size=count, replace=replace)


def rec_loss(pos_scores, neg_scores, valid) -> Tensor:
    """Mean over valid positions of -[log sigmoid(pos) + log sigmoid(-neg)]."""
    valid = np.asarray(valid, dtype=np.float64)
    count = valid.sum()
    if count == 0:
        raise ContractError("no valid positions in batch")
    per_pos = ops.add(ops.log_sigmoid(pos_scores), ops.log_sigmoid(ops.mul(neg_scores, -1.0)))
    return ops.mul(ops.sum(ops.mul(per_pos, valid)), -1.0 / count)


def total_loss(l_rec, l_l1, l_dag, lam: float):
    return l_rec + lam * l_l1 + l_dag


class Adam:
    """Adam with bias correction; moments start at zero."""

    def __init__(self, lr: float = 0.001, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict, grads: dict[str, np.ndarray]) -> None:
        for k, g in grads.items():
            if not np.isfinite(g).all():
                raise NumericError(f"non-finite gradient for {k}")
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for k, g in grads.items():
            if k not in self.m:
                self.m[k] = np.zeros_like(g)
                self.v[k] = np.zeros_like(g)
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * (g * g)
            p = params[k]
            arr = p.data if isinstance(p, Tensor) else p
            arr -= self.lr * (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + self.eps)


def adam_step(params: dict, grads: dict, state: Adam | None = None, lr: float = 0.001) -> Adam:
    state = state or Adam(lr)
    state.step(params, grads)
    return state


def _batches(order: np.ndarray, size: int):
    for start in range(0, len(order), size):
        yield order[start : start + size]


def trainable_users(data: SplitDataset) -> np.ndarray:
    return np.array([u for u, seq in enumerate(data.train) if len(seq) >= 2], dtype=np.int64)


def train_epoch(
    data: SplitDataset,
    model: CausalRec,
    state: CausalState,
    config: TrainConfig,
    rngs: dict[str, np.random.Generator],
    optimizer: Adam,
    epoch: int = 0,
) -> tuple[list[StepRecord], CausalState]:
    """One pass over the shuffled training users; R is refreshed at the end."""
    lam = config.effective_lambda
    n = model.config.n_max
    off_diag = 1.0 - np.eye(n)
    records = []
    order = rngs["shuffle"].permutation(trainable_users(data))
    for step, batch in enumerate(_batches(order, config.batch_size)):
        pairs = [data.train_pairs(int(u)) for u in batch]
        inputs = np.stack([p[0].items for p in pairs])
        targets = np.stack([p[1] for p in pairs])
        valid = targets != 0
        negs = np.zeros_like(targets)
        for row, u in enumerate(batch):
            k = int(valid[row].sum())
            negs[row, valid[row]] = sample_negatives(data.train[int(u)], data.n_items, k, rngs["negatives"])
        cands = np.stack([targets, negs], axis=-1)

        with Tape() as tape:
            H, _ = model.forward(inputs, state.R, training=True, rng=rngs["dropout"])
            scores = gather_scores(model.params, H, cands)
            l_rec = rec_loss(scores[..., 0], scores[..., 1], valid)
            real = (inputs != 0).astype(np.float64)[..., None]
            W = ops.mul(batch_covariance(ops.mul(H, real)).W, off_diag)
            l_l1 = l1_penalty(W)
            l_dag, hs = dag_loss([W], state)
            if config.freeze_causal:
                loss = l_rec
            else:
                loss = ops.add(ops.add(l_rec, ops.mul(l_l1, lam)), l_dag)
        tape.backward(loss)

        grads = {k: t.grad for k, t in model.params.items()}
        grads["item_emb"][0] = 0.0
        grad_norm = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
        if not math.isfinite(grad_norm):
            raise NumericError(f"non-finite gradient at epoch {epoch} step {step}")
        optimizer.step(model.params, grads)
        model.params["item_emb"].data[0] = 0.0
        model.zero_grad()

        h_mean = float(np.mean(hs))
        state.observe(W.data, h_mean)
        if config.freeze_causal:
            parts = (float(l_rec.data), 0.0, 0.0)
        else:
            parts = (float(l_rec.data), float(l_l1.data), float(l_dag.data))
        records.append(
            StepRecord(epoch, step, parts[0], parts[1], parts[2], float(loss.data), h_mean, grad_norm)
        )
    return records, state.end_epoch()


@dataclass
class EpochSummary:
    epoch: int
    L_rec: float
    h_mean: float
    rho: float
    beta_mult: float
    valid_hr: float | None = None
    valid_ndcg: float | None = None


@dataclass
class TrainResult:
    model: CausalRec
    state: CausalState
    records: list[StepRecord] = field(default_factory=list)
    epochs: list[EpochSummary] = field(default_factory=list)
    best_epoch: int | None = None


def fit(
    data: SplitDataset,
    model_config: ModelConfig,
    config: TrainConfig,
    out_dir: str | None = None,
    step_stream: TextIO | None = None,
    on_epoch: Callable[[EpochSummary], None] | None = None,
) -> TrainResult:
    """Train from scratch under ``config.seed``.

    When ``out_dir`` is given, step records go to ``steps.jsonl`` and
    checkpoints to ``epoch_<k>.crckpt`` / ``best.crckpt``.
    """
    from .evaluation import evaluate

    mcfg = variant_model_config(dataclasses.replace(model_config, n_items=data.n_items, n_max=data.n_max), config)
    rngs = rngmod.spawn(config.seed)
    model = CausalRec(mcfg, rng=rngs["init"])
    state = CausalState(
        n=mcfg.n_max,
        lam=config.effective_lambda,
        rho=config.rho0,
        gamma1=config.gamma1,
        gamma2=config.gamma2,
        tau=config.tau,
        rho_max=config.rho_max,
    )
    optimizer = Adam(config.learning_rate)
    result = TrainResult(model, state)

    own_stream = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        if step_stream is None:
            own_stream = step_stream = open(os.path.join(out_dir, "steps.jsonl"), "w")
    best = -1.0
    try:
        for epoch in range(1, config.epochs + 1):
            records, state = train_epoch(data, model, state, config, rngs, optimizer, epoch)
            result.records.extend(records)
            if step_stream is not None:
                for r in records:
                    step_stream.write(r.to_json() + "\n")
                step_stream.flush()
            summary = EpochSummary(
                epoch,
                float(np.mean([r.L_rec for r in records])) if records else float("nan"),
                state.kappa,
                state.rho,
                state.beta_mult,
            )
            if config.eval_every and epoch % config.eval_every == 0:
                rep = evaluate(
                    model, data, state.R, negatives=config.eval_negatives, seed=config.seed, split="valid"
                )
                summary.valid_hr, summary.valid_ndcg = rep.hr, rep.ndcg
                if rep.ndcg > best:
                    best = rep.ndcg
                    result.best_epoch = epoch
                    if out_dir is not None:
                        checkpoint.save(os.path.join(out_dir, "best.crckpt"), model, state, {"epoch": epoch})
            if out_dir is not None and config.checkpoint_every and epoch % config.checkpoint_every == 0:
                checkpoint.save(os.path.join(out_dir, f"epoch_{epoch}.crckpt"), model, state, {"epoch": epoch})
            result.epochs.append(summary)
            if on_epoch is not None:
                on_epoch(summary)
    finally:
        if own_stream is not None:
            own_stream.close()
    result.state = state
    return result
