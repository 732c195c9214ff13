"""CRCKPT1 checkpoints.

Layout, little-endian::

    b"CRCKPT1\\n" | u64 manifest length | manifest (UTF-8 JSON) | payload

The manifest lists every array as ``{"name", "shape", "offset"}`` (offset in
bytes into the payload) plus the model config, causal-state scalars and free
metadata. The payload is the raw float64 data of each array, back to back.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .causal import CausalState
from .errors import CheckpointError
from .model import CausalRec, ModelConfig
from .numerics import Tensor

MAGIC = b"CRCKPT1\n"


def encode(model: CausalRec, state: CausalState | None = None, meta: dict | None = None) -> bytes:
    arrays = [(name, t.data) for name, t in model.params.items()]
    if state is not None:
        arrays += [("causal.W", state.W), ("causal.R", state.R)]
    entries, chunks, offset = [], [], 0
    for name, arr in arrays:
        raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(raw)
        offset += len(raw)
    manifest = {
        "config": model.config.to_dict(),
        "causal": None if state is None else {"n": state.n, **state.scalars()},
        "meta": meta or {},
        "tensors": entries,
    }
    head = json.dumps(manifest, sort_keys=True).encode("utf-8")
    return MAGIC + struct.pack("<Q", len(head)) + head + b"".join(chunks)


def decode(blob: bytes) -> tuple[CausalRec, CausalState | None, dict]:
    if not blob.startswith(MAGIC):
        raise CheckpointError("not a CRCKPT1 checkpoint")
    (size,) = struct.unpack_from("<Q", blob, len(MAGIC))
    start = len(MAGIC) + 8
    try:
        manifest = json.loads(blob[start : start + size].decode("utf-8"))
    except ValueError as exc:
        raise CheckpointError(f"corrupt manifest: {exc}") from exc
    payload = memoryview(blob)[start + size :]
    arrays = {}
    for e in manifest["tensors"]:
        count = int(np.prod(e["shape"])) if e["shape"] else 1
        if e["offset"] + 8 * count > len(payload):
            raise CheckpointError(f"truncated payload for {e['name']}")
        data = np.frombuffer(payload, dtype="<f8", count=count, offset=e["offset"])
        arrays[e["name"]] = data.astype(np.float64).reshape(e["shape"])
    config = ModelConfig(**manifest["config"])
    params = {
        name: Tensor(arr, requires_grad=True, name=name)
        for name, arr in arrays.items()
        if not name.startswith("causal.")
    }
    state = None
    if manifest["causal"] is not None:
        scal = dict(manifest["causal"])
        state = CausalState(W=arrays["causal.W"], R=arrays["causal.R"], **scal)
    return CausalRec(config, params), state, manifest["meta"]


def save(path: str, model: CausalRec, state: CausalState | None = None, meta: dict | None = None) -> None:
    with open(path, "wb") as fh:
        fh.write(encode(model, state, meta))


def load(path: str) -> tuple[CausalRec, CausalState | None, dict]:
    with open(path, "rb") as fh:
        return decode(fh.read())
