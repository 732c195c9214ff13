"""Planted-rule synthetic interaction logs for smoke and acceptance runs."""

from __future__ import annotations

import numpy as np

from . import rng as rngmod
from .dataio import SplitDataset, build_sequences, parse_interactions, split_leave_last_two


def planted_pairs_log(
    n_users: int = 50,
    n_items: int = 20,
    pairs: tuple[int, int] = (2, 4),
    seed: int = 0,
) -> str:
    """TSV log where every user consumes item pairs (2k-1, 2k) back to back.

    Each user draws between ``pairs[0]`` and ``pairs[1]`` distinct pairs, so
    item ``i{2k}`` always directly follows ``i{2k-1}``.
    """
    if n_items % 2:
        raise ValueError("n_items must be even")
    rng = rngmod.stream(seed, "data")
    lines = []
    for u in range(n_users):
        m = int(rng.integers(pairs[0], pairs[1] + 1))
        ks = rng.choice(n_items // 2, size=m, replace=False) + 1
        t = 1000 * u
        for k in ks:
            for item in (2 * k - 1, 2 * k):
                lines.append(f"u{u}\ti{item}\t{t}")
                t += 1
    return "\n".join(lines) + "\n"


def planted_pairs_dataset(n_max: int = 12, **kwargs) -> SplitDataset:
    parsed = parse_interactions(planted_pairs_log(**kwargs), "tsv")
    vocab, seqs = build_sequences(parsed.records, n_max)
    return split_leave_last_two(vocab, seqs, n_max)
