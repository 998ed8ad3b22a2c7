"""The two export operations: embedding files and candidate files."""

from __future__ import annotations

import json
import logging
import random
from dataclasses import dataclass
from pathlib import Path

from .debc import DebcWriter, ExportError, write_sidecar
from .encoders import make_encoder, simple_tokens
from .translate import MASK_TOKEN, high_frequency_words, make_translator, noise_variant

log = logging.getLogger("debcse_export")


@dataclass
class ExportConfig:
    model: str = "hash:64"
    batch_size: int = 32
    device: str = "cpu"
    pooling: str = "mean"  # mean | cls

    def validate(self) -> None:
        if self.batch_size < 1:
            raise ExportError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.pooling not in ("mean", "cls"):
            raise ExportError(f"pooling must be 'mean' or 'cls', got {self.pooling!r}")


def read_sentences(path) -> list[str]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ExportError(f"cannot read {path}: {exc}") from exc
    if text.endswith("\n"):
        text = text[:-1]
    if not text:
        raise ExportError(f"{path} is empty")
    return text.split("\n")


def export_embeddings(sentences_path, output_path, cfg: ExportConfig) -> int:
    """Embed every input line; row i of the output is line i's embedding.

    Any line the encoder cannot embed aborts the whole export: silently
    skipping would desynchronize the row-to-sentence alignment that every
    downstream consumer depends on. The sidecar is the input, copied
    verbatim. Returns the row count.
    """
    cfg.validate()
    lines = read_sentences(sentences_path)
    encoder = make_encoder(cfg.model, device=cfg.device, pooling=cfg.pooling)
    with DebcWriter(output_path, dim=encoder.dim) as writer:
        for start in range(0, len(lines), cfg.batch_size):
            batch = lines[start:start + cfg.batch_size]
            try:
                rows = encoder.encode_batch(batch)
            except ExportError:
                raise
            except Exception as exc:
                raise ExportError(
                    f"encoding failed on lines {start}..{start + len(batch) - 1}: {exc}"
                ) from exc
            for row in rows:
                writer.write_row(row)
        if writer.count != len(lines):
            raise ExportError(
                f"encoder returned {writer.count} rows for {len(lines)} lines")
    write_sidecar(output_path, lines)
    log.info("exported %d x %d embeddings to %s", len(lines), encoder.dim, output_path)
    return len(lines)


def backtranslate_candidates(
    sentences_path,
    output_path,
    translator_name: str = "identity",
    pivot: str = "zh",
    candidates_per_anchor: int = 4,
    seed: int = 0,
    highfreq_vocab_size: int = 100,
    mask_token: str = MASK_TOKEN,
    device: str = "cpu",
) -> tuple[int, int]:
    """Write candidate records for every anchor line.

    Each candidate is a noised copy of the anchor sent through the
    source -> pivot -> source round trip. Per-line translation failures skip
    that record (counted); duplicates of the anchor or of earlier candidates
    are dropped. Returns (records_written, failures).
    """
    if candidates_per_anchor < 1:
        raise ExportError("candidates_per_anchor must be >= 1")
    lines = read_sentences(sentences_path)
    translator = make_translator(translator_name, pivot=pivot, device=device)
    highfreq = high_frequency_words(lines, highfreq_vocab_size)
    written = 0
    failures = 0
    with open(output_path, "w", encoding="utf-8") as fh:
        for anchor_id, line in enumerate(lines):
            tokens = simple_tokens(line)
            if not tokens:
                failures += 1
                log.warning("line %d is empty, skipped", anchor_id)
                continue
            rng = random.Random(f"{seed}:{anchor_id}")  # stable across runs
            emitted: set[str] = set()
            attempts = 0
            while len(emitted) < candidates_per_anchor and attempts < 4 * candidates_per_anchor:
                attempts += 1
                noised = " ".join(noise_variant(tokens, rng, highfreq, mask_token))
                try:
                    candidate = translator.round_trip(noised)
                except Exception as exc:
                    failures += 1
                    log.warning("translation failed for anchor %d: %s", anchor_id, exc)
                    continue
                if not candidate.strip() or candidate == line or candidate in emitted:
                    continue
                emitted.add(candidate)
                fh.write(json.dumps({"anchor_id": anchor_id, "candidate": candidate},
                                    sort_keys=True) + "\n")
                written += 1
    log.info("wrote %d candidate records (%d failures) to %s",
             written, failures, output_path)
    return written, failures
