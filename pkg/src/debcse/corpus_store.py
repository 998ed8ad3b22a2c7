"""Corpus ingestion, tokenization, frequency tables, and the DEBC embedding file format."""

from __future__ import annotations

import logging
import struct
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, EmbeddingFormatError

log = logging.getLogger("debcse.corpus")

MAGIC = b"DEBC"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIQI")  # magic, version, count, dim

DEFAULT_MIN_TOKENS = 3
DEFAULT_MAX_TOKENS = 64


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P")


def tokenize(text: str) -> list[str]:
    """Split on whitespace, strip leading/trailing punctuation, lowercase.

    Tokens that are entirely punctuation are dropped; empty input gives [].
    """
    out = []
    for raw in text.split():
        start, end = 0, len(raw)
        while start < end and _is_punct(raw[start]):
            start += 1
        while end > start and _is_punct(raw[end - 1]):
            end -= 1
        if end > start:
            out.append(raw[start:end].lower())
    return out


@dataclass(frozen=True)
class Sentence:
    id: int
    text: str
    tokens: tuple[str, ...]


@dataclass
class IngestStats:
    lines_read: int = 0
    kept: int = 0
    dropped_short: int = 0
    dropped_long: int = 0
    dropped_invalid_utf8: int = 0

    @property
    def dropped(self) -> int:
        return self.dropped_short + self.dropped_long + self.dropped_invalid_utf8


@dataclass
class Corpus:
    """Id-ordered sentences plus a token frequency table over all of them."""

    sentences: list[Sentence]
    freq: dict[str, int]
    stats: IngestStats | None = field(default=None, repr=False)

    def __len__(self) -> int:
        return len(self.sentences)

    def __getitem__(self, sid: int) -> Sentence:
        return self.sentences[sid]

    def __iter__(self):
        return iter(self.sentences)

    def texts(self) -> list[str]:
        return [s.text for s in self.sentences]

    def vocabulary(self) -> list[str]:
        """All distinct tokens, lexicographically sorted."""
        return sorted(self.freq)


def corpus_from_lines(
    lines,
    min_tokens: int = DEFAULT_MIN_TOKENS,
    max_tokens: int = DEFAULT_MAX_TOKENS,
    stats: IngestStats | None = None,
) -> Corpus:
    """Build a Corpus from an iterable of text lines, filtering by token count.

    Survivors are re-indexed densely from 0 so that sentence id always
    equals the row index of any aligned embedding matrix.
    """
    if min_tokens < 1:
        raise ValueError(f"min_tokens must be >= 1, got {min_tokens}")
    if max_tokens < min_tokens:
        raise ValueError(f"max_tokens ({max_tokens}) < min_tokens ({min_tokens})")
    stats = stats or IngestStats()
    sentences: list[Sentence] = []
    freq: Counter[str] = Counter()
    for line in lines:
        stats.lines_read += 1
        tokens = tokenize(line)
        if len(tokens) < min_tokens:
            stats.dropped_short += 1
            continue
        if len(tokens) > max_tokens:
            stats.dropped_long += 1
            continue
        sentences.append(Sentence(id=len(sentences), text=line, tokens=tuple(tokens)))
        freq.update(tokens)
    stats.kept = len(sentences)
    if not sentences:
        raise DataError("no sentences survived ingestion filters")
    log.info(
        "ingested %d sentences (dropped %d: %d short, %d long, %d invalid)",
        stats.kept, stats.dropped, stats.dropped_short, stats.dropped_long,
        stats.dropped_invalid_utf8,
    )
    return Corpus(sentences=sentences, freq=dict(freq), stats=stats)


def ingest(
    path,
    min_tokens: int = DEFAULT_MIN_TOKENS,
    max_tokens: int = DEFAULT_MAX_TOKENS,
) -> Corpus:
    """Read a one-sentence-per-line UTF-8 file into a Corpus.

    Lines that fail UTF-8 decoding are skipped with a logged line number;
    lines outside the [min_tokens, max_tokens] band are dropped and counted.
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read corpus file {path}: {exc}") from exc
    if raw.endswith(b"\n"):
        raw = raw[:-1]
    stats = IngestStats()

    def decoded_lines():
        for lineno, bline in enumerate(raw.split(b"\n"), start=1):
            try:
                yield bline.rstrip(b"\r").decode("utf-8")
            except UnicodeDecodeError:
                stats.dropped_invalid_utf8 += 1
                stats.lines_read += 1
                log.warning("%s:%d: invalid UTF-8, line skipped", path, lineno)

    # decoded_lines() already bumps lines_read for skipped lines; corpus_from_lines
    # bumps it for the lines it actually sees.
    return corpus_from_lines(decoded_lines(), min_tokens, max_tokens, stats=stats)


def top_frequency_words(corpus: Corpus, k: int) -> list[str]:
    """The k highest-frequency tokens, ties broken lexicographically ascending."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    ranked = sorted(corpus.freq.items(), key=lambda kv: (-kv[1], kv[0]))
    return [tok for tok, _ in ranked[:k]]


@dataclass
class EmbeddingMatrix:
    """Dense float32 sentence embeddings, row i aligned to sentence id i.

    Row norms are cached in float64; zero-norm rows are rejected because
    cosine similarity is undefined for them.
    """

    data: np.ndarray   # (count, dim) float32, C-contiguous
    norms: np.ndarray  # (count,) float64

    @property
    def count(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    @classmethod
    def from_array(cls, arr) -> "EmbeddingMatrix":
        data = np.ascontiguousarray(arr, dtype=np.float32)
        if data.ndim != 2 or data.shape[0] == 0 or data.shape[1] == 0:
            raise DataError(f"embedding matrix must be non-empty 2-D, got shape {data.shape}")
        if not np.isfinite(data).all():
            raise DataError("embedding matrix contains non-finite values")
        norms = np.linalg.norm(data.astype(np.float64), axis=1)
        if (norms == 0.0).any():
            bad = int(np.flatnonzero(norms == 0.0)[0])
            raise DataError(f"zero-norm embedding row at index {bad}")
        return cls(data=data, norms=norms)

    def row(self, i: int) -> np.ndarray:
        return self.data[i]

    def unit_rows(self) -> np.ndarray:
        """Float64 copy with rows scaled to unit norm."""
        return self.data.astype(np.float64) / self.norms[:, None]


def write_embeddings(matrix: EmbeddingMatrix, path) -> None:
    path = Path(path)
    payload = np.ascontiguousarray(matrix.data, dtype="<f4").tobytes()
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, matrix.count, matrix.dim)
    path.write_bytes(header + payload)


def read_embeddings(path) -> EmbeddingMatrix:
    """Read and fully validate a DEBC embedding file.

    Round-trips written files bit-exactly; any header or payload violation
    (bad magic, version mismatch, size mismatch, non-finite value, zero-norm
    row) is an EmbeddingFormatError.
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read embedding file {path}: {exc}") from exc
    if len(raw) < _HEADER.size:
        raise EmbeddingFormatError(f"{path}: file shorter than header")
    magic, version, count, dim = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise EmbeddingFormatError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise EmbeddingFormatError(f"{path}: unsupported version {version}")
    expected = count * dim * 4
    got = len(raw) - _HEADER.size
    if got != expected:
        raise EmbeddingFormatError(
            f"{path}: payload holds {got} bytes, header requires {expected}"
        )
    if count == 0 or dim == 0:
        raise EmbeddingFormatError(f"{path}: empty matrix (count={count}, dim={dim})")
    data = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(count, dim)
    try:
        return EmbeddingMatrix.from_array(data)
    except DataError as exc:
        raise EmbeddingFormatError(f"{path}: {exc}") from exc


def sidecar_path(embedding_path) -> Path:
    """The index-aligned sentence file that travels with a DEBC file."""
    return Path(embedding_path).with_suffix(".txt")


def write_sidecar(embedding_path, lines) -> None:
    sidecar_path(embedding_path).write_text(
        "".join(line + "\n" for line in lines), encoding="utf-8"
    )


def read_sidecar(embedding_path) -> list[str]:
    p = sidecar_path(embedding_path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read sidecar {p}: {exc}") from exc
    if text.endswith("\n"):
        text = text[:-1]
    return text.split("\n") if text else []
