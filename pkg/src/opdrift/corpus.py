"""Opcode corpus handling: parsing, vocabularies, encoding, time segmentation.

Input format is deliberately simple: one opcode text file per sample (one
instruction per line, first whitespace-delimited token is the mnemonic) plus
a CSV manifest `path,family,date` mapping files to families and timestamps.
"""
from __future__ import annotations

import csv
import datetime as dt
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

OTHER_TOKEN = "OTHER"

COMMENT_PREFIXES = (";", "#")


class CorpusError(ValueError):
    """Raised for malformed manifests, opcode files, or date strings."""


@dataclass(frozen=True, order=True)
class Month:
    """A calendar month, ordered chronologically."""

    year: int
    month: int

    def __post_init__(self) -> None:
        if not 1 <= self.month <= 12:
            raise ValueError(f"month out of range: {self.month}")

    @classmethod
    def of(cls, d: dt.date) -> "Month":
        return cls(d.year, d.month)

    @classmethod
    def parse(cls, text: str) -> "Month":
        try:
            y, m = text.split("-")
            return cls(int(y), int(m))
        except ValueError as exc:
            raise CorpusError(f"bad month {text!r}, expected YYYY-MM") from exc

    @property
    def ordinal(self) -> int:
        return self.year * 12 + (self.month - 1)

    @classmethod
    def from_ordinal(cls, n: int) -> "Month":
        return cls(n // 12, n % 12 + 1)

    def plus(self, months: int) -> "Month":
        return Month.from_ordinal(self.ordinal + months)

    def __str__(self) -> str:
        return f"{self.year:04d}-{self.month:02d}"


@dataclass(frozen=True)
class Sample:
    """One specimen: family label, creation date, raw opcode token sequence."""

    id: str
    family: str
    timestamp: dt.date
    opcodes: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.opcodes:
            raise CorpusError(f"sample {self.id!r} has an empty opcode sequence")

    @property
    def month(self) -> Month:
        return Month.of(self.timestamp)


@dataclass(frozen=True)
class Vocabulary:
    """Ordered top-K opcode list; the reserved OTHER symbol is always last."""

    tokens: tuple[str, ...]
    index_of: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if not self.tokens or self.tokens[-1] != OTHER_TOKEN:
            raise ValueError("vocabulary must end with the OTHER token")
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("vocabulary tokens must be unique")
        object.__setattr__(self, "index_of", {t: i for i, t in enumerate(self.tokens)})

    @property
    def size(self) -> int:
        """M: number of symbols including OTHER."""
        return len(self.tokens)

    @property
    def other_index(self) -> int:
        return len(self.tokens) - 1

    def save(self, path: Path | str) -> None:
        Path(path).write_text("".join(t + "\n" for t in self.tokens), encoding="utf-8")

    @classmethod
    def load(cls, path: Path | str) -> "Vocabulary":
        tokens = tuple(Path(path).read_text(encoding="utf-8").split())
        return cls(tokens)


@dataclass(frozen=True)
class EncodedSample:
    """A sample's opcodes mapped to vocabulary indices."""

    sample_id: str
    indices: np.ndarray  # int64, values in [0, M)

    def __len__(self) -> int:
        return len(self.indices)


@dataclass(frozen=True)
class TimeWindow:
    """Inclusive month range [start, end]."""

    start: Month
    end: Month

    def __post_init__(self) -> None:
        if self.end < self.start:
            raise ValueError(f"window end {self.end} precedes start {self.start}")

    @property
    def label(self) -> str:
        return f"{self.start}..{self.end}"

    @property
    def months(self) -> list[Month]:
        return [Month.from_ordinal(n) for n in range(self.start.ordinal, self.end.ordinal + 1)]

    def contains(self, m: Month) -> bool:
        return self.start.ordinal <= m.ordinal <= self.end.ordinal


def parse_opcode_file(text: str, origin: str = "<string>") -> list[str]:
    """Extract the lowercased mnemonic sequence from an opcode text file.

    Each non-empty line contributes its first whitespace-delimited token;
    lines starting with ';' or '#' are comments and skipped.
    """
    tokens: list[str] = []
    for line in text.splitlines():
        stripped = line.strip()
        if not stripped or stripped.startswith(COMMENT_PREFIXES):
            continue
        tokens.append(stripped.split()[0].lower())
    if not tokens:
        raise CorpusError(f"{origin}: no opcodes found")
    return tokens


def _parse_date(text: str, origin: str) -> dt.date:
    try:
        return dt.date.fromisoformat(text.strip())
    except ValueError as exc:
        raise CorpusError(f"{origin}: bad date {text!r}, expected YYYY-MM-DD") from exc


def load_manifest(path: Path | str, lenient: bool = False) -> list[Sample]:
    """Load all samples referenced by a `path,family,date` CSV manifest.

    Opcode file paths are resolved relative to the manifest's directory.
    In lenient mode bad rows are logged and skipped; otherwise the first
    bad row raises CorpusError. Samples are returned sorted by timestamp.
    """
    manifest = Path(path)
    if not manifest.is_file():
        raise CorpusError(f"manifest not found: {manifest}")
    base = manifest.parent
    samples: list[Sample] = []
    with manifest.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["path", "family", "date"]:
            raise CorpusError(f"{manifest}: manifest header must be 'path,family,date'")
        for lineno, row in enumerate(reader, start=2):
            origin = f"{manifest}:{lineno}"
            try:
                rel = row["path"].strip()
                opcode_path = base / rel
                if not opcode_path.is_file():
                    raise CorpusError(f"{origin}: opcode file not found: {opcode_path}")
                tokens = parse_opcode_file(opcode_path.read_text(encoding="utf-8"), origin=str(opcode_path))
                samples.append(
                    Sample(
                        id=rel,
                        family=row["family"].strip(),
                        timestamp=_parse_date(row["date"], origin),
                        opcodes=tuple(tokens),
                    )
                )
            except CorpusError as exc:
                if not lenient:
                    raise
                log.warning("skipping row: %s", exc)
    samples.sort(key=lambda s: (s.timestamp, s.id))
    return samples


def build_vocabulary(samples: list[Sample], top_k: int = 30) -> Vocabulary:
    """Top-k opcodes by total occurrence count across all samples, plus OTHER.

    Ties break lexicographically ascending so identical corpora always yield
    identical vocabularies. Fewer than top_k distinct tokens is allowed; the
    vocabulary is then just all tokens plus OTHER.
    """
    if not samples:
        raise CorpusError("cannot build a vocabulary from zero samples")
    if top_k < 1:
        raise ValueError(f"top_k must be >= 1, got {top_k}")
    counts: Counter[str] = Counter()
    for s in samples:
        counts.update(s.opcodes)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    kept = [tok for tok, _ in ranked[:top_k]]
    return Vocabulary(tuple(kept) + (OTHER_TOKEN,))


def encode(sample: Sample, vocab: Vocabulary) -> EncodedSample:
    """Map opcodes to vocabulary indices; out-of-vocabulary tokens go to OTHER."""
    other = vocab.other_index
    idx = vocab.index_of
    arr = np.fromiter((idx.get(t, other) for t in sample.opcodes), dtype=np.int64, count=len(sample.opcodes))
    return EncodedSample(sample_id=sample.id, indices=arr)


def monthly_buckets(samples: list[Sample], vocab: Vocabulary) -> dict[Month, list[EncodedSample]]:
    """Encode and bucket samples by calendar month.

    The returned dict is ordered chronologically and covers every month from
    the first to the last populated one; months with no samples map to empty
    lists so downstream timelines stay uniformly spaced.
    """
    if not samples:
        raise CorpusError("cannot bucket an empty dataset")
    first = min(s.month for s in samples)
    last = max(s.month for s in samples)
    buckets: dict[Month, list[EncodedSample]] = {
        Month.from_ordinal(n): [] for n in range(first.ordinal, last.ordinal + 1)
    }
    for s in samples:
        buckets[s.month].append(encode(s, vocab))
    return buckets


def sliding_windows(
    samples: list[Sample],
    vocab: Vocabulary,
    window_months: int = 12,
    slide_months: int = 1,
) -> list[tuple[TimeWindow, list[EncodedSample]]]:
    """Overlapping time windows over the dataset's month span.

    The first window starts at the first populated month; each subsequent
    window slides by `slide_months`; the last window ends at or before the
    last populated month. Every window carries the encoded samples of all
    months it covers.
    """
    if window_months < 1 or slide_months < 1:
        raise ValueError("window_months and slide_months must be >= 1")
    buckets = monthly_buckets(samples, vocab)
    months = list(buckets)
    span = len(months)
    if span < window_months:
        raise CorpusError(
            f"dataset spans {span} months; need at least {window_months} "
            f"for window={window_months}"
        )
    windows: list[tuple[TimeWindow, list[EncodedSample]]] = []
    start = 0
    while start + window_months <= span:
        window = TimeWindow(months[start], months[start + window_months - 1])
        content: list[EncodedSample] = []
        for m in months[start : start + window_months]:
            content.extend(buckets[m])
        windows.append((window, content))
        start += slide_months
    return windows
