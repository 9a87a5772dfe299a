"""Corpus handling: ingest, validate, normalize, tokenize, split, rebalance.

The unit of ingestion is a :class:`RawRecord` (a labeled product description
with an assurance level); an ordered collection of records plus a per-class
index forms an immutable :class:`Dataset`.
"""

from __future__ import annotations

import csv
import hashlib
import math
import re
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ._seeds import derive_seed

PAD_ID = 0
OOV_ID = 1
PAD_TOKEN = "<pad>"
OOV_TOKEN = "<oov>"

HS_CODE_RE = re.compile(r"^\d{6}$")

# Small built-in English function-word list; override with load_stopwords().
DEFAULT_STOPWORDS = frozenset(
    """a an and are as at be by for from has have in into is it its of on or
    that the their these this those to was were will with not no nor so than
    then there when where which while who whom why how all any both each few
    more most other some such""".split()
)

_SYMBOL_RE = re.compile(r"[^\w\s]|_", re.UNICODE)
_WS_RE = re.compile(r"\s+")


class CsvSchemaError(ValueError):
    """Raised for malformed input CSV rows; carries the offending row number."""

    def __init__(self, message: str, row: int | None = None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class RawRecord:
    """One labeled product description."""

    record_id: str
    short_description: str
    medium_description: str
    etim: str | None
    hs_code: str
    assurance_level: int
    upsampled: bool = False

    def __post_init__(self):
        if not HS_CODE_RE.match(self.hs_code):
            raise ValueError(f"hs_code must be six decimal digits, got {self.hs_code!r}")
        if self.assurance_level not in (1, 2, 3, 4):
            raise ValueError(f"assurance_level must be in 1..4, got {self.assurance_level}")
        if not (self.short_description.strip() or self.medium_description.strip()):
            raise ValueError("at least one of short/medium description must be non-empty")


@dataclass(frozen=True)
class Dataset:
    """Immutable ordered collection of records with a per-class position index."""

    records: tuple[RawRecord, ...]
    class_index: dict[str, list[int]] = field(compare=False)

    @staticmethod
    def from_records(records: Iterable[RawRecord]) -> "Dataset":
        recs = tuple(records)
        index: dict[str, list[int]] = {}
        seen_ids: set[str] = set()
        for pos, rec in enumerate(recs):
            if rec.record_id in seen_ids and not rec.upsampled:
                raise ValueError(f"duplicate record_id {rec.record_id!r} not flagged as upsampled")
            seen_ids.add(rec.record_id)
            index.setdefault(rec.hs_code, []).append(pos)
        return Dataset(records=recs, class_index=index)

    def __len__(self) -> int:
        return len(self.records)

    def class_counts(self) -> dict[str, int]:
        return {code: len(pos) for code, pos in self.class_index.items()}

    def classes(self) -> list[str]:
        """Class labels in sorted order (the canonical label-id assignment)."""
        return sorted(self.class_index)

    def subset(self, positions: Sequence[int]) -> "Dataset":
        return Dataset.from_records(self.records[p] for p in positions)


@dataclass(frozen=True)
class SplitConfig:
    test_fraction: float = 0.05
    seed: int = 0
    stratified: bool = True

    def __post_init__(self):
        if not 0.0 < self.test_fraction < 1.0:
            raise ValueError(f"test_fraction must be in (0, 1), got {self.test_fraction}")


class Vocabulary:
    """Token-to-id mapping with reserved ids 0 (padding) and 1 (out-of-vocabulary)."""

    def __init__(self, token_to_id: dict[str, int], max_size: int):
        self.token_to_id = dict(token_to_id)
        self.max_size = max_size

    def __len__(self) -> int:
        return len(self.token_to_id)

    def lookup(self, token: str) -> int:
        return self.token_to_id.get(token, OOV_ID)

    def content_hash(self) -> str:
        return hashlib.sha256(self.serialize().encode("utf-8")).hexdigest()

    def serialize(self) -> str:
        pairs = sorted(self.token_to_id.items(), key=lambda kv: kv[1])
        return "".join(f"{tok}\t{idx}\n" for tok, idx in pairs)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.serialize(), encoding="utf-8")

    @staticmethod
    def load(path: str | Path) -> "Vocabulary":
        mapping: dict[str, int] = {}
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if not line:
                continue
            tok, _, idx = line.partition("\t")
            mapping[tok] = int(idx)
        if mapping.get(PAD_TOKEN) != PAD_ID or mapping.get(OOV_TOKEN) != OOV_ID:
            raise ValueError("vocabulary file is missing the reserved pad/oov entries")
        return Vocabulary(mapping, max_size=len(mapping))


def normalize_text(raw: str, stopwords: frozenset[str] | set[str] = frozenset()) -> str:
    """Lowercase, strip symbols, collapse whitespace, and drop stopword tokens.

    Idempotent: applying it twice (with the same stopword set) is a no-op.
    """
    s = _SYMBOL_RE.sub("", raw.lower())
    tokens = [t for t in _WS_RE.split(s) if t and t not in stopwords]
    return " ".join(tokens)


def load_stopwords(path: str | Path) -> frozenset[str]:
    """Read a user-supplied stopword file: one token per line, '#' comments."""
    words = set()
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            words.add(line.lower())
    return frozenset(words)


def combined_text(record: RawRecord, stopwords: frozenset[str] | set[str] = DEFAULT_STOPWORDS) -> str:
    """Normalized short + medium (+ etim, when present) description."""
    parts = [
        normalize_text(record.short_description, stopwords),
        normalize_text(record.medium_description, stopwords),
    ]
    if record.etim:
        parts.append(normalize_text(record.etim, stopwords))
    return " ".join(p for p in parts if p)


def build_vocabulary(corpus: Sequence[str], max_size: int) -> Vocabulary:
    """Frequency-ranked vocabulary over whitespace-split tokens.

    Ties in frequency break lexicographically so the mapping is deterministic.
    The top ``max_size - 2`` tokens receive ids starting at 2.
    """
    if max_size < 3:
        raise ValueError(f"max_size must be >= 3, got {max_size}")
    if not corpus:
        raise ValueError("corpus must be non-empty")
    freq: dict[str, int] = {}
    for text in corpus:
        for tok in text.split():
            freq[tok] = freq.get(tok, 0) + 1
    ranked = sorted(freq, key=lambda t: (-freq[t], t))[: max_size - 2]
    mapping = {PAD_TOKEN: PAD_ID, OOV_TOKEN: OOV_ID}
    for offset, tok in enumerate(ranked):
        mapping[tok] = 2 + offset
    return Vocabulary(mapping, max_size=max_size)


def tokenize(text: str, vocab: Vocabulary, max_len: int) -> list[int]:
    """Map normalized text to exactly ``max_len`` ids (truncate / right-pad)."""
    ids = [vocab.lookup(tok) for tok in text.split()][:max_len]
    ids.extend([PAD_ID] * (max_len - len(ids)))
    return ids


@dataclass(frozen=True)
class TokenSequence:
    ids: tuple[int, ...]
    label_id: int
    original_record_id: str


def encode_dataset(
    data: Dataset,
    vocab: Vocabulary,
    max_len: int,
    class_list: Sequence[str] | None = None,
    stopwords: frozenset[str] | set[str] = DEFAULT_STOPWORDS,
) -> list[TokenSequence]:
    """Tokenize every record against ``vocab`` with labels from ``class_list``."""
    classes = list(class_list) if class_list is not None else data.classes()
    label_of = {code: i for i, code in enumerate(classes)}
    out = []
    for rec in data.records:
        ids = tokenize(combined_text(rec, stopwords), vocab, max_len)
        out.append(TokenSequence(tuple(ids), label_of[rec.hs_code], rec.record_id))
    return out


def filter_by_assurance(data: Dataset, min_level: int = 3) -> Dataset:
    """Keep records with assurance_level >= min_level, order preserved."""
    kept = [r for r in data.records if r.assurance_level >= min_level]
    if not kept and len(data):
        warnings.warn(f"assurance filter (>= {min_level}) removed every record", stacklevel=2)
    return Dataset.from_records(kept)


def stratified_split(data: Dataset, cfg: SplitConfig) -> tuple[Dataset, Dataset]:
    """Per-class split: each class contributes round(n * test_fraction) but at
    least 1 record to the test side, and keeps at least 1 on the train side.
    """
    for code, positions in data.class_index.items():
        if len(positions) < 2:
            raise ValueError(f"class {code} has {len(positions)} record(s); need >= 2 to split")
    rng = np.random.default_rng(derive_seed(cfg.seed, "stratified-split"))
    test_mask = np.zeros(len(data), dtype=bool)
    for code in data.classes():
        positions = data.class_index[code]
        n = len(positions)
        n_test = min(max(1, round(n * cfg.test_fraction)), n - 1)
        chosen = rng.choice(n, size=n_test, replace=False)
        for c in chosen:
            test_mask[positions[c]] = True
    train = data.subset([i for i in range(len(data)) if not test_mask[i]])
    test = data.subset([i for i in range(len(data)) if test_mask[i]])
    return train, test


def stratified_upsample(
    data: Dataset,
    minority_threshold: float = 0.01,
    strategy: str = "mean",
    seed: int = 0,
    target_over: str = "minority",
) -> Dataset:
    """Raise-only duplication of minority-class records.

    Minority classes are those whose share of the dataset is below
    ``minority_threshold``. The target count T is ``ceil(strategy(counts))``
    where counts are, by default, the minority-class counts (``target_over``
    can widen that to all classes). Classes already at or above T are left
    alone; originals are never mutated and every duplicate carries the
    ``upsampled`` flag.
    """
    if strategy not in ("mean", "median"):
        raise ValueError(f"strategy must be 'mean' or 'median', got {strategy!r}")
    if target_over not in ("minority", "all"):
        raise ValueError(f"target_over must be 'minority' or 'all', got {target_over!r}")
    if not len(data):
        raise ValueError("cannot upsample an empty dataset")
    counts = data.class_counts()
    total = len(data)
    minority = sorted(c for c, n in counts.items() if n / total < minority_threshold)
    if not minority:
        return data
    pool = [counts[c] for c in minority] if target_over == "minority" else list(counts.values())
    stat = float(np.mean(pool)) if strategy == "mean" else float(np.median(pool))
    target = math.ceil(stat)
    rng = np.random.default_rng(derive_seed(seed, "stratified-upsample"))
    extra: list[RawRecord] = []
    for code in minority:
        deficit = target - counts[code]
        if deficit <= 0:
            continue
        positions = data.class_index[code]
        picks = rng.choice(len(positions), size=deficit, replace=True)
        extra.extend(replace(data.records[positions[p]], upsampled=True) for p in picks)
    return Dataset.from_records(list(data.records) + extra)


CSV_HEADER = ["record_id", "short_description", "medium_description", "etim", "hs_code", "assurance_level"]


def read_csv(path: str | Path) -> Dataset:
    """Load the standard corpus CSV; schema violations report the row number.

    Repeated record_ids are flagged as upsample duplicates (a prepared,
    upsampled corpus round-trips through its CSV form).
    """
    records: list[RawRecord] = []
    seen: set[str] = set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvSchemaError("file is empty") from None
        if header != CSV_HEADER:
            raise CsvSchemaError(f"expected header {','.join(CSV_HEADER)}, got {','.join(header)}", row=1)
        for rownum, row in enumerate(reader, start=2):
            if len(row) != len(CSV_HEADER):
                raise CsvSchemaError(f"expected {len(CSV_HEADER)} fields, got {len(row)}", row=rownum)
            rid, short, medium, etim, code, level = row
            try:
                rec = RawRecord(
                    record_id=rid,
                    short_description=short,
                    medium_description=medium,
                    etim=etim or None,
                    hs_code=code,
                    assurance_level=int(level) if level.strip() else -1,
                    upsampled=rid in seen,
                )
            except ValueError as exc:
                raise CsvSchemaError(str(exc), row=rownum) from None
            seen.add(rid)
            records.append(rec)
    return Dataset.from_records(records)


def read_unlabeled_csv(path: str | Path) -> list[RawRecord]:
    """Lenient reader for inference batches.

    Accepts either the full corpus schema or the unlabeled 4-column form
    ``record_id,short_description,medium_description,etim``; label columns,
    when present, are carried through but not validated for training use.
    """
    records: list[RawRecord] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvSchemaError("file is empty") from None
        if header == CSV_HEADER:
            width = 6
        elif header == CSV_HEADER[:4]:
            width = 4
        else:
            raise CsvSchemaError("unrecognized inference CSV header", row=1)
        for rownum, row in enumerate(reader, start=2):
            if len(row) != width:
                raise CsvSchemaError(f"expected {width} fields, got {len(row)}", row=rownum)
            rid, short, medium, etim = row[:4]
            if not (short.strip() or medium.strip()):
                raise CsvSchemaError("both descriptions empty", row=rownum)
            records.append(
                RawRecord(
                    record_id=rid,
                    short_description=short,
                    medium_description=medium,
                    etim=etim or None,
                    hs_code=row[4] if width == 6 and HS_CODE_RE.match(row[4]) else "000000",
                    assurance_level=int(row[5]) if width == 6 and row[5].strip().isdigit() else 4,
                )
            )
    return records


def write_csv(data: Dataset | Sequence[RawRecord], path: str | Path) -> None:
    records = data.records if isinstance(data, Dataset) else data
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for rec in records:
            writer.writerow(
                [
                    rec.record_id,
                    rec.short_description,
                    rec.medium_description,
                    rec.etim or "",
                    rec.hs_code,
                    rec.assurance_level,
                ]
            )
