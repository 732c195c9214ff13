"""Command-line entry point.

Subcommands: prepare, train, eval, ablate, explain, scmlab, make-toy.
Settings resolve as defaults < ``--config`` key=value file < command-line flags,
and every run that writes outputs also writes the resolved ``config.txt``.
"""

from __future__ import annotations

import argparse
import contextlib
import os
import sys

import numpy as np

from . import checkpoint, dataio, scmlab
from .causal import edge_list, edge_list_to_text, matrix_to_text
from .errors import CausalRecError
from .evaluation import CSV_HEADER, evaluate, explain
from .model import ModelConfig
from .rng import stream
from .training import VARIANTS, TrainConfig, fit

DEFAULTS = {
    "input": None,
    "out": "runs/latest",
    "format": None,
    "seed": 0,
    "epochs": 20,
    "lr": 0.001,
    "batch": 256,
    "nmax": 200,
    "hidden": 64,
    "layers": 2,
    "alpha": 1.0,
    "lambda": 1e-3,
    "tau": 0.3,
    "dropout": 0.2,
    "variant": "full",
    "deterministic": False,
    "negatives": 100,
    "z": 10,
    "ndcg_mode": "ideal",
    "eval_every": 1,
    "checkpoint_every": 0,
    "gamma1": 10.0,
    "gamma2": 0.25,
    "rho0": 1.0,
    "rho_max": 1e4,
}

_TYPES = {k: type(v) for k, v in DEFAULTS.items() if v is not None}
_TYPES.update({"input": str, "format": str})


def parse_config_file(path: str) -> dict:
    """key=value lines; '#' starts a comment."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise CausalRecError(f"{path}:{lineno}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            key = key.replace("-", "_")
            if key not in DEFAULTS:
                raise CausalRecError(f"{path}:{lineno}: unknown key {key!r}")
            out[key] = _coerce(key, value)
    return out


def _coerce(key: str, value):
    kind = _TYPES.get(key, str)
    if value in ("None", ""):
        return None
    if kind is bool:
        return str(value).lower() in ("1", "true", "yes", "on")
    return kind(value)


def resolve(args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS)
    if getattr(args, "config", None):
        cfg.update(parse_config_file(args.config))
    for key in DEFAULTS:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    cfg["command"] = args.command
    return cfg


def write_config(cfg: dict, out_dir: str) -> str:
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "config.txt")
    with open(path, "w", encoding="utf-8") as fh:
        for key in sorted(cfg):
            fh.write(f"{key}={cfg[key]}\n")
    return path


def model_config(cfg: dict, n_items: int = 1) -> ModelConfig:
    return ModelConfig(
        n_items=n_items,
        n_max=cfg["nmax"],
        hidden=cfg["hidden"],
        layers=cfg["layers"],
        dropout=cfg["dropout"],
        alpha=cfg["alpha"],
    )


def train_config(cfg: dict, variant: str | None = None) -> TrainConfig:
    return TrainConfig(
        learning_rate=cfg["lr"],
        batch_size=cfg["batch"],
        epochs=cfg["epochs"],
        lam=cfg["lambda"],
        alpha=cfg["alpha"],
        seed=cfg["seed"],
        ablation=variant or cfg["variant"],
        tau=cfg["tau"],
        rho0=cfg["rho0"],
        gamma1=cfg["gamma1"],
        gamma2=cfg["gamma2"],
        rho_max=cfg["rho_max"],
        checkpoint_every=cfg["checkpoint_every"],
        eval_every=cfg["eval_every"],
        eval_negatives=cfg["negatives"],
    )


def _dataset(cfg: dict, n_max: int | None = None) -> dataio.SplitDataset:
    if not cfg["input"]:
        raise CausalRecError("--input is required")
    return dataio.load_dataset(cfg["input"], n_max or cfg["nmax"], cfg["format"])


def _dataset_name(cfg: dict) -> str:
    return os.path.splitext(os.path.basename(cfg["input"] or "dataset"))[0]


@contextlib.contextmanager
def _determinism(enabled: bool):
    if not enabled:
        yield
        return
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        yield
        return
    with threadpool_limits(limits=1):
        yield


# --- commands --------------------------------------------------------------------------


def cmd_prepare(cfg, args, out):
    if not cfg["input"]:
        raise CausalRecError("--input is required")
    data, parsed = dataio.load_log(cfg["input"], cfg["format"], cfg["nmax"])
    os.makedirs(cfg["out"], exist_ok=True)
    path = os.path.join(cfg["out"], "sequences.crseq")
    dataio.save_cache(path, data)
    write_config(cfg, cfg["out"])
    counts = {"records": len(parsed.records), "malformed": parsed.malformed, **data.counts}
    out.write(" ".join(f"{k}={v}" for k, v in counts.items()) + "\n")
    out.write(f"cache={path}\n")


def _write_structure(state, out_dir):
    with open(os.path.join(out_dir, "W.txt"), "w") as fh:
        fh.write(matrix_to_text(state.W))
    with open(os.path.join(out_dir, "R.txt"), "w") as fh:
        fh.write(matrix_to_text(state.R))
    with open(os.path.join(out_dir, "edges.txt"), "w") as fh:
        fh.write(edge_list_to_text(edge_list(state.W, state.R)))


def _train_one(cfg, data, variant, out_dir, out):
    tcfg = train_config(cfg, variant)
    if data.counts["valid_users"] == 0:
        tcfg.eval_every = 0
    result = fit(data, model_config(cfg), tcfg, out_dir=out_dir)
    checkpoint.save(
        os.path.join(out_dir, "final.crckpt"),
        result.model,
        result.state,
        {"epoch": cfg["epochs"], "variant": variant, "seed": cfg["seed"]},
    )
    _write_structure(result.state, out_dir)
    report = evaluate(
        result.model, data, result.state.R, cfg["z"], cfg["negatives"], cfg["seed"], "test", cfg["ndcg_mode"]
    )
    return result, report


def cmd_train(cfg, args, out):
    data = _dataset(cfg)
    write_config(cfg, cfg["out"])
    _, report = _train_one(cfg, data, cfg["variant"], cfg["out"], out)
    row = report.csv_row(_dataset_name(cfg), cfg["variant"], cfg["seed"])
    with open(os.path.join(cfg["out"], "metrics.csv"), "w") as fh:
        fh.write(CSV_HEADER + "\n" + row + "\n")
    out.write(report.to_line() + "\n")


def cmd_eval(cfg, args, out):
    if not args.checkpoint:
        raise CausalRecError("--checkpoint is required")
    model, state, meta = checkpoint.load(args.checkpoint)
    data = _dataset(cfg, model.config.n_max)
    R = state.R if state is not None else None
    report = evaluate(model, data, R, cfg["z"], cfg["negatives"], cfg["seed"], args.split, cfg["ndcg_mode"])
    out.write(report.to_line() + "\n")
    out.write(CSV_HEADER + "\n")
    out.write(report.csv_row(_dataset_name(cfg), meta.get("variant", cfg["variant"]), cfg["seed"]) + "\n")


def cmd_ablate(cfg, args, out):
    data = _dataset(cfg)
    write_config(cfg, cfg["out"])
    rows = [CSV_HEADER]
    for variant in VARIANTS:
        sub = os.path.join(cfg["out"], variant)
        os.makedirs(sub, exist_ok=True)
        _, report = _train_one(cfg, data, variant, sub, out)
        rows.append(report.csv_row(_dataset_name(cfg), variant, cfg["seed"]))
    text = "\n".join(rows) + "\n"
    with open(os.path.join(cfg["out"], "ablation.csv"), "w") as fh:
        fh.write(text)
    out.write(text)


def cmd_explain(cfg, args, out):
    if not args.checkpoint:
        raise CausalRecError("--checkpoint is required")
    model, state, _ = checkpoint.load(args.checkpoint)
    if state is None:
        raise CausalRecError("checkpoint carries no causal state")
    data = _dataset(cfg, model.config.n_max)
    wanted = args.users.split(",") if args.users else data.users[:1]
    index = {u: i for i, u in enumerate(data.users)}
    for user in wanted:
        if user not in index:
            raise CausalRecError(f"unknown user {user!r}")
        u = index[user]
        got = data.eval_input(u, "test")
        seq, target = got if got is not None else (dataio.pad_left(data.train[u], data.n_max, u), None)
        rec = explain(model, state, seq, args.topk, data, target)
        out.write(rec.to_text() + "\n")


def cmd_scmlab(cfg, args, out):
    exp = args.experiment
    if exp == "identify":
        out.write(scmlab.TRIAL_HEADER + "\n")
        for s in range(args.trials):
            d, n = scmlab.identify_trial(cfg["seed"] + s, n=args.n or 3, N=args.samples)
            out.write(scmlab.trial_row(cfg["seed"] + s, n, d, 0.0, True) + "\n")
    elif exp == "notears":
        out.write(scmlab.TRIAL_HEADER + "\n")
        n = args.n or 5
        for s in range(args.trials):
            inst, res, d = scmlab.notears_trial(
                cfg["seed"] + s, n=n, n_edges=args.edges, N=args.samples, lambda_l1=args.l1
            )
            out.write(scmlab.trial_row(cfg["seed"] + s, n, d, res.h, res.converged) + "\n")
    elif exp == "covariance":
        out.write("seed,n,fraction_within_5se,max_abs_error,check\n")
        n = args.n or 4
        for s in range(args.trials):
            rng = stream(cfg["seed"] + s, "scmlab", 2)
            inst = scmlab.generate_random_dag(n, 0.5, rng=rng)
            chk = scmlab.scm_cov_check(inst, args.samples, rng)
            out.write(f"{cfg['seed'] + s},{n},{chk.fraction_within()!r},{chk.max_abs_error!r},scm\n")
            A = rng.random((n, n))
            A /= A.sum(axis=1, keepdims=True)
            L = rng.standard_normal((n, n))
            cov_v = L @ L.T + np.eye(n)
            V = rng.multivariate_normal(np.zeros(n), cov_v, size=args.samples)
            chk = scmlab.attention_cov_check(A, V, cov_v)
            out.write(f"{cfg['seed'] + s},{n},{chk.fraction_within()!r},{chk.max_abs_error!r},attention\n")
    if args.export_graph:
        rng = stream(cfg["seed"], "scmlab", 3)
        inst = scmlab.generate_random_dag(args.n or 5, 0.5, rng=rng)
        with open(args.export_graph, "w") as fh:
            fh.write(edge_list_to_text(edge_list(inst.B)))


def cmd_make_toy(cfg, args, out):
    from .toy import planted_pairs_log

    text = planted_pairs_log(n_users=args.users_count, n_items=args.items, seed=cfg["seed"])
    path = cfg["out"] if cfg["out"] != DEFAULTS["out"] else "toy.tsv"
    with open(path, "w") as fh:
        fh.write(text)
    out.write(f"wrote {path}\n")


COMMANDS = {
    "prepare": cmd_prepare,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "explain": cmd_explain,
    "scmlab": cmd_scmlab,
    "make-toy": cmd_make_toy,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value file; command-line flags override it")
    common.add_argument("--input")
    common.add_argument("--out")
    common.add_argument("--format", choices=("tsv", "csv"))
    common.add_argument("--seed", type=int)
    common.add_argument("--epochs", type=int)
    common.add_argument("--lr", type=float)
    common.add_argument("--batch", type=int)
    common.add_argument("--nmax", type=int)
    common.add_argument("--hidden", type=int)
    common.add_argument("--layers", type=int)
    common.add_argument("--alpha", type=float)
    common.add_argument("--lambda", dest="lambda", type=float)
    common.add_argument("--tau", type=float)
    common.add_argument("--rho-max", dest="rho_max", type=float)
    common.add_argument("--dropout", type=float)
    common.add_argument("--variant", choices=VARIANTS)
    common.add_argument("--deterministic", action="store_const", const=True)
    common.add_argument("--negatives", type=int)
    common.add_argument("--z", type=int)
    common.add_argument("--ndcg-mode", dest="ndcg_mode", choices=("ideal", "max_user"))
    common.add_argument("--eval-every", dest="eval_every", type=int)
    common.add_argument("--checkpoint-every", dest="checkpoint_every", type=int)

    parser = argparse.ArgumentParser(prog="causalrec", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("prepare", parents=[common], help="parse, split and cache an interaction log")
    sub.add_parser("train", parents=[common], help="train and write step records, checkpoints, metrics")
    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    p.add_argument("--checkpoint")
    p.add_argument("--split", choices=("valid", "test"), default="test")
    sub.add_parser("ablate", parents=[common], help="train all ablation variants under one seed")
    p = sub.add_parser("explain", parents=[common], help="textual causal explanations for users")
    p.add_argument("--checkpoint")
    p.add_argument("--users", help="comma-separated user ids")
    p.add_argument("--topk", type=int, default=5)
    p = sub.add_parser("scmlab", parents=[common], help="synthetic SCM trials")
    p.add_argument("--experiment", choices=("identify", "notears", "covariance"), default="identify")
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--n", type=int)
    p.add_argument("--edges", type=int, default=8)
    p.add_argument("--samples", type=int, default=10_000)
    p.add_argument("--l1", type=float, default=0.01)
    p.add_argument("--export-graph", dest="export_graph")
    p = sub.add_parser("make-toy", parents=[common], help="write the planted-pairs toy log")
    p.add_argument("--users", dest="users_count", type=int, default=50)
    p.add_argument("--items", type=int, default=20)
    return parser


def run(argv=None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = resolve(args)
        with _determinism(bool(cfg["deterministic"])):
            COMMANDS[args.command](cfg, args, out)
    except (CausalRecError, OSError, ValueError, KeyError) as exc:
        print(f"causalrec {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
