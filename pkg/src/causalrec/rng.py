"""Seed derivation.

Every random consumer gets its own Philox stream derived from one root seed
and a fixed stream id, so adding draws in one subsystem never shifts another.
"""

from __future__ import annotations

import numpy as np

STREAMS = {
    "init": 0,
    "shuffle": 1,
    "dropout": 2,
    "negatives": 3,
    "eval": 4,
    "scmlab": 5,
    "data": 6,
}


def stream(seed: int, name: str, *extra: int) -> np.random.Generator:
    """Counter-based generator for ``name`` under root ``seed``."""
    try:
        key = (STREAMS[name],) + tuple(int(e) for e in extra)
    except KeyError:
        raise KeyError(f"unknown rng stream {name!r}") from None
    ss = np.random.SeedSequence(int(seed), spawn_key=key)
    return np.random.Generator(np.random.Philox(ss))


def spawn(seed: int) -> dict[str, np.random.Generator]:
    return {name: stream(seed, name) for name in STREAMS}
