"""Desk-scale differentiable sentence encoder.

Embedding-table lookup, mean pooling, one linear layer, tanh. Small enough
that every gradient stays hand-derivable, yet structured enough (token
identity in, dense vector out) to stand in for a heavyweight encoder in the
mining and training pipeline.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus_store import (
    Corpus,
    EmbeddingMatrix,
    read_embeddings,
    read_sidecar,
    write_embeddings,
    write_sidecar,
)
from .errors import DataError

log = logging.getLogger("debcse.encoder")

UNK_TOKEN = "<unk>"

# RNG stream labels: every random decision is keyed by (seed, stream, entity)
# so results never depend on scheduling or worker count.
STREAM_ENCODER_INIT = 0
STREAM_POOL_SUBSAMPLE = 1
STREAM_NEGATIVE_DRAW = 2
STREAM_CANDIDATE_GEN = 3
STREAM_POSITIVE_DRAW = 4
STREAM_BATCH_ORDER = 5
STREAM_INBATCH_PICK = 6


def stream_rng(seed: int, stream: int, entity: int = 0) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(stream), int(entity)])


@dataclass
class EncoderParams:
    """Trainable encoder state: token embeddings plus a linear projection.

    Row 0 of embed_table is reserved for unknown tokens. All arrays are
    float64; the 32-bit embedding file format applies to storage only.
    """

    vocab: dict[str, int]
    embed_table: np.ndarray  # (V, d)
    proj: np.ndarray         # (d, d)
    proj_bias: np.ndarray    # (d,)
    apply_tanh: bool = True

    @property
    def dim(self) -> int:
        return self.embed_table.shape[1]

    @classmethod
    def init(cls, tokens, dim: int, seed: int, apply_tanh: bool = True) -> "EncoderParams":
        """Seeded initialization over a token vocabulary.

        The projection starts near identity so a fresh encoder's cosine
        geometry already reflects token overlap, which is what makes the
        untrained encoder usable as a mining filter.
        """
        vocab = {UNK_TOKEN: 0}
        for tok in sorted(set(tokens)):
            if tok not in vocab:
                vocab[tok] = len(vocab)
        rng = stream_rng(seed, STREAM_ENCODER_INIT)
        embed = rng.normal(0.0, 1.0, size=(len(vocab), dim))
        proj = np.eye(dim) + rng.normal(0.0, 0.05 / np.sqrt(dim), size=(dim, dim))
        bias = np.zeros(dim)
        return cls(vocab=vocab, embed_table=embed, proj=proj, proj_bias=bias,
                   apply_tanh=apply_tanh)

    def copy(self) -> "EncoderParams":
        return EncoderParams(
            vocab=self.vocab,
            embed_table=self.embed_table.copy(),
            proj=self.proj.copy(),
            proj_bias=self.proj_bias.copy(),
            apply_tanh=self.apply_tanh,
        )

    def token_ids(self, tokens) -> np.ndarray:
        # sorted so pooling sums in a canonical order: sentences with equal
        # token multisets encode bit-identically
        ids = np.array([self.vocab.get(t, 0) for t in tokens], dtype=np.int64)
        ids.sort()
        return ids


def encode(params: EncoderParams, tokens) -> np.ndarray:
    """Encode one token list to a d-vector: tanh(proj @ meanpool(rows) + bias)."""
    if not tokens:
        raise ValueError("cannot encode an empty sentence")
    ids = params.token_ids(tokens)
    pooled = params.embed_table[ids].mean(axis=0)
    pre = params.proj @ pooled + params.proj_bias
    return np.tanh(pre) if params.apply_tanh else pre


def encode_corpus(params: EncoderParams, corpus: Corpus) -> EmbeddingMatrix:
    """Embed every corpus sentence; row i belongs to sentence id i."""
    rows = np.stack([encode(params, s.tokens) for s in corpus])
    return EmbeddingMatrix.from_array(rows)


def save_checkpoint(params: EncoderParams, out_dir) -> None:
    """Write a checkpoint: embed_table in the binary embedding format (with a
    token sidecar giving the row-to-token mapping) plus a JSON manifest for
    the projection and configuration."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    emb_path = out_dir / "params.debc"
    write_embeddings(EmbeddingMatrix.from_array(params.embed_table), emb_path)
    ordered = sorted(params.vocab.items(), key=lambda kv: kv[1])
    write_sidecar(emb_path, [tok for tok, _ in ordered])
    manifest = {
        "dim": params.dim,
        "apply_tanh": params.apply_tanh,
        "proj": params.proj.tolist(),
        "proj_bias": params.proj_bias.tolist(),
    }
    (out_dir / "params.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )


def load_checkpoint(ckpt_dir) -> EncoderParams:
    ckpt_dir = Path(ckpt_dir)
    emb_path = ckpt_dir / "params.debc"
    matrix = read_embeddings(emb_path)
    tokens = read_sidecar(emb_path)
    if len(tokens) != matrix.count:
        raise DataError(
            f"checkpoint sidecar lists {len(tokens)} tokens for {matrix.count} rows"
        )
    if tokens[0] != UNK_TOKEN:
        raise DataError(f"checkpoint row 0 must be {UNK_TOKEN!r}, got {tokens[0]!r}")
    try:
        manifest = json.loads((ckpt_dir / "params.json").read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read checkpoint manifest in {ckpt_dir}: {exc}") from exc
    proj = np.asarray(manifest["proj"], dtype=np.float64)
    bias = np.asarray(manifest["proj_bias"], dtype=np.float64)
    dim = int(manifest["dim"])
    if proj.shape != (dim, dim) or bias.shape != (dim,) or matrix.dim != dim:
        raise DataError(f"checkpoint shape mismatch in {ckpt_dir}")
    vocab = {tok: i for i, tok in enumerate(tokens)}
    return EncoderParams(
        vocab=vocab,
        embed_table=matrix.data.astype(np.float64),
        proj=proj,
        proj_bias=bias,
        apply_tanh=bool(manifest["apply_tanh"]),
    )


class EmbeddingSource:
    """Resolves vectors for corpus sentences and for arbitrary texts.

    Encoder-backed sources can embed anything; matrix-backed sources can only
    resolve by index (corpus id, or candidate record index for a candidate
    embedding file).
    """

    def corpus_matrix(self) -> EmbeddingMatrix:
        raise NotImplementedError

    def vector_for_id(self, sid: int) -> np.ndarray:
        raise NotImplementedError

    def vector_for_tokens(self, tokens) -> np.ndarray:
        raise NotImplementedError

    def describe(self) -> str:
        raise NotImplementedError


class EncoderSource(EmbeddingSource):
    def __init__(self, params: EncoderParams, corpus: Corpus, label: str = "encoder"):
        self.params = params
        self.corpus = corpus
        self.label = label
        self._matrix: EmbeddingMatrix | None = None

    def corpus_matrix(self) -> EmbeddingMatrix:
        if self._matrix is None:
            self._matrix = encode_corpus(self.params, self.corpus)
        return self._matrix

    def vector_for_id(self, sid: int) -> np.ndarray:
        return encode(self.params, self.corpus[sid].tokens)

    def vector_for_tokens(self, tokens) -> np.ndarray:
        return encode(self.params, tokens)

    def describe(self) -> str:
        return self.label


class MatrixSource(EmbeddingSource):
    def __init__(self, matrix: EmbeddingMatrix, label: str = "embedding-file"):
        self.matrix = matrix
        self.label = label

    def corpus_matrix(self) -> EmbeddingMatrix:
        return self.matrix

    def vector_for_id(self, sid: int) -> np.ndarray:
        if not 0 <= sid < self.matrix.count:
            raise DataError(f"sentence id {sid} outside embedding matrix ({self.matrix.count} rows)")
        return self.matrix.row(sid).astype(np.float64)

    def vector_for_tokens(self, tokens) -> np.ndarray:
        raise DataError(
            "an embedding file cannot embed new texts; use an encoder source "
            "or supply a candidate embedding file"
        )

    def describe(self) -> str:
        return self.label
