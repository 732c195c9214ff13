"""Interaction-log ingestion, per-user sequences and the leave-last-two split."""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field
from typing import BinaryIO, Iterable

import numpy as np

from .errors import ContractError, IngestionError

PAD = 0
DEFAULT_NMAX = 200
MAX_MALFORMED_FRACTION = 0.01
CACHE_MAGIC = b"CRSEQ1"


@dataclass(frozen=True)
class InteractionRecord:
    user_id: str
    item_id: str
    timestamp: int


@dataclass(frozen=True)
class ParseResult:
    records: list[InteractionRecord]
    malformed: int
    header: bool


@dataclass
class PaddedSequence:
    items: np.ndarray
    length: int
    user_index: int

    @property
    def mask(self) -> np.ndarray:
        m = np.zeros(self.items.shape[0], dtype=bool)
        if self.length:
            m[-self.length:] = True
        return m


@dataclass
class Vocabulary:
    """Bidirectional item map. Index 0 is the padding item."""

    items: list[str] = field(default_factory=lambda: [""])
    index: dict[str, int] = field(default_factory=dict)

    def add(self, item_id: str) -> int:
        idx = self.index.get(item_id)
        if idx is None:
            idx = len(self.items)
            self.index[item_id] = idx
            self.items.append(item_id)
        return idx

    def __len__(self) -> int:
        """Number of real items (padding excluded)."""
        return len(self.items) - 1


def _split_line(line: str, sep: str) -> list[str]:
    return [f.strip() for f in line.rstrip("\r\n").split(sep)]


def parse_interactions(source: BinaryIO | bytes | str, fmt: str = "tsv") -> ParseResult:
    """Parse ``user<sep>item<sep>timestamp`` lines.

    A first line whose timestamp field is non-numeric is taken as a header.
    Blank lines are ignored; other unparseable lines are skipped and counted.
    """
    if fmt not in ("tsv", "csv"):
        raise ContractError(f"unknown format {fmt!r}")
    sep = "\t" if fmt == "tsv" else ","
    if isinstance(source, (bytes, bytearray)):
        text = bytes(source).decode("utf-8")
    elif isinstance(source, str):
        text = source
    else:
        text = source.read().decode("utf-8")

    records: list[InteractionRecord] = []
    malformed = 0
    header = False
    seen = 0
    for lineno, line in enumerate(io.StringIO(text)):
        if not line.strip():
            continue
        fields = _split_line(line, sep)
        first = seen == 0
        seen += 1
        if len(fields) != 3:
            malformed += 1
            continue
        user, item, ts = fields
        try:
            stamp = int(ts)
        except ValueError:
            if first:
                header = True
                seen -= 1
            else:
                malformed += 1
            continue
        if not user or not item or stamp < 0:
            malformed += 1
            continue
        records.append(InteractionRecord(user, item, stamp))
    if not records:
        raise IngestionError("no interactions found in input")
    if malformed > MAX_MALFORMED_FRACTION * seen:
        raise IngestionError(f"{malformed} of {seen} lines malformed (limit {MAX_MALFORMED_FRACTION:.0%})")
    return ParseResult(records, malformed, header)


def build_sequences(
    records: Iterable[InteractionRecord], n_max: int = DEFAULT_NMAX
) -> tuple[Vocabulary, dict[str, list[int]]]:
    """Chronological item-index lists per user, keeping the latest ``n_max`` items.

    Ties on timestamp keep input order; vocabulary indices follow first
    appearance in the input.
    """
    if n_max < 2:
        raise ContractError("n_max must be at least 2")
    vocab = Vocabulary()
    per_user: dict[str, list[tuple[int, int, int]]] = {}
    for pos, rec in enumerate(records):
        idx = vocab.add(rec.item_id)
        per_user.setdefault(rec.user_id, []).append((rec.timestamp, pos, idx))
    sequences = {}
    for user, events in per_user.items():
        events.sort()
        sequences[user] = [idx for _, _, idx in events][-n_max:]
    return vocab, sequences


def pad_left(items, n_max: int, user_index: int = 0) -> PaddedSequence:
    items = list(items)[-n_max:]
    out = np.zeros(n_max, dtype=np.int64)
    if items:
        out[-len(items):] = items
    return PaddedSequence(out, len(items), user_index)


@dataclass
class SplitDataset:
    users: list[str]
    train: list[list[int]]
    valid: list[int | None]
    test: list[int | None]
    vocab: Vocabulary
    n_max: int

    @property
    def n_items(self) -> int:
        return len(self.vocab)

    @property
    def counts(self) -> dict[str, int]:
        return {
            "users": len(self.users),
            "items": self.n_items,
            "train_interactions": sum(len(t) for t in self.train),
            "valid_users": sum(v is not None for v in self.valid),
            "test_users": sum(t is not None for t in self.test),
        }

    def history(self, u: int) -> list[int]:
        """Full chronology for user ``u``: train, then valid, then test."""
        return self.train[u] + [x for x in (self.valid[u], self.test[u]) if x is not None]

    def train_pairs(self, u: int) -> tuple[PaddedSequence, np.ndarray]:
        """Input prefix and shifted targets for next-item training.

        Both are left-padded to ``n_max``; target 0 marks positions without a
        prediction target.
        """
        seq = self.train[u]
        inputs = pad_left(seq[:-1], self.n_max, u)
        targets = pad_left(seq[1:], self.n_max, u).items
        return inputs, targets

    def with_n_max(self, n_max: int) -> "SplitDataset":
        """Same users re-truncated to the latest ``n_max`` interactions and re-split."""
        if n_max == self.n_max:
            return self
        if n_max > self.n_max:
            raise ContractError(f"data was truncated at n_max={self.n_max}; cannot widen to {n_max}")
        seqs = {user: self.history(u)[-n_max:] for u, user in enumerate(self.users)}
        return split_leave_last_two(self.vocab, seqs, n_max)

    def eval_input(self, u: int, split: str) -> tuple[PaddedSequence, int] | None:
        """Model input and held-out target for ``split``.

        Validation sees only the training prefix; test additionally sees the
        validation item, never the test item itself.
        """
        if split == "valid":
            target, prefix = self.valid[u], self.train[u]
        elif split == "test":
            target = self.test[u]
            prefix = self.train[u] + ([self.valid[u]] if self.valid[u] is not None else [])
        else:
            raise ContractError(f"unknown split {split!r}")
        if target is None:
            return None
        return pad_left(prefix, self.n_max, u), target


def split_leave_last_two(
    vocab: Vocabulary, sequences: dict[str, list[int]], n_max: int = DEFAULT_NMAX
) -> SplitDataset:
    users, train, valid, test = [], [], [], []
    for user, seq in sequences.items():
        users.append(user)
        if len(seq) >= 3:
            train.append(list(seq[:-2]))
            valid.append(seq[-2])
            test.append(seq[-1])
        else:
            train.append(list(seq))
            valid.append(None)
            test.append(None)
    return SplitDataset(users, train, valid, test, vocab, n_max)


def load_log(path: str, fmt: str | None = None, n_max: int = DEFAULT_NMAX) -> tuple[SplitDataset, ParseResult]:
    if fmt is None:
        fmt = "csv" if str(path).endswith(".csv") else "tsv"
    with open(path, "rb") as fh:
        parsed = parse_interactions(fh, fmt)
    vocab, seqs = build_sequences(parsed.records, n_max)
    return split_leave_last_two(vocab, seqs, n_max), parsed


# --- binary sequence cache ---------------------------------------------------------
#
# CRSEQ1 layout, little-endian:
#   magic "CRSEQ1" | u32 n_max | u32 n_items | u32 n_users
#   n_items x (u32 byte length, utf-8 item id)         -- indices 1..n_items
#   n_users x (u32 byte length, utf-8 user id, u32 count, count x u32 item index)


def _put_str(buf: io.BytesIO, s: str) -> None:
    raw = s.encode("utf-8")
    buf.write(struct.pack("<I", len(raw)))
    buf.write(raw)


def _get_str(view: memoryview, off: int) -> tuple[str, int]:
    (n,) = struct.unpack_from("<I", view, off)
    off += 4
    return bytes(view[off : off + n]).decode("utf-8"), off + n


def encode_cache(data: SplitDataset) -> bytes:
    buf = io.BytesIO()
    buf.write(CACHE_MAGIC)
    buf.write(struct.pack("<III", data.n_max, data.n_items, len(data.users)))
    for item in data.vocab.items[1:]:
        _put_str(buf, item)
    for u, user in enumerate(data.users):
        _put_str(buf, user)
        seq = data.history(u)
        buf.write(struct.pack("<I", len(seq)))
        buf.write(np.asarray(seq, dtype="<u4").tobytes())
    return buf.getvalue()


def decode_cache(blob: bytes) -> SplitDataset:
    if blob[: len(CACHE_MAGIC)] != CACHE_MAGIC:
        raise IngestionError("not a CRSEQ1 cache")
    view = memoryview(blob)
    off = len(CACHE_MAGIC)
    n_max, n_items, n_users = struct.unpack_from("<III", view, off)
    off += 12
    vocab = Vocabulary()
    for _ in range(n_items):
        item, off = _get_str(view, off)
        vocab.add(item)
    sequences = {}
    for _ in range(n_users):
        user, off = _get_str(view, off)
        (count,) = struct.unpack_from("<I", view, off)
        off += 4
        sequences[user] = np.frombuffer(blob, dtype="<u4", count=count, offset=off).astype(int).tolist()
        off += 4 * count
    if off != len(blob):
        raise IngestionError("trailing bytes in CRSEQ1 cache")
    return split_leave_last_two(vocab, sequences, n_max)


def save_cache(path: str, data: SplitDataset) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_cache(data))


def load_cache(path: str) -> SplitDataset:
    with open(path, "rb") as fh:
        return decode_cache(fh.read())


def load_dataset(path: str, n_max: int = DEFAULT_NMAX, fmt: str | None = None) -> SplitDataset:
    """Load either a CRSEQ1 cache or a raw interaction log."""
    with open(path, "rb") as fh:
        head = fh.read(len(CACHE_MAGIC))
    if head == CACHE_MAGIC:
        return load_cache(path).with_n_max(n_max)
    return load_log(path, fmt, n_max)[0]
