"""Sentence encoders behind one batch interface.

The hash encoder is a dependency-free deterministic featurizer used for
tests and offline smoke runs; real models load through sentence-transformers
when the `models` extra is installed.
"""

from __future__ import annotations

import hashlib
import math
import struct

from .debc import ExportError


def simple_tokens(text: str) -> list[str]:
    return text.lower().split()


class HashEncoder:
    """Mean-pooled per-token feature vectors derived from SHA-256 digests.

    Deterministic across processes and platforms; cosine geometry reflects
    token overlap, which is all the mining pipeline needs from a stand-in.
    """

    def __init__(self, dim: int = 64):
        if dim < 1:
            raise ExportError(f"dimension must be >= 1, got {dim}")
        self.dim = dim
        self._token_cache: dict[str, list[float]] = {}

    def _token_vector(self, token: str) -> list[float]:
        cached = self._token_cache.get(token)
        if cached is not None:
            return cached
        values: list[float] = []
        counter = 0
        material = token.encode("utf-8")
        while len(values) < self.dim:
            digest = hashlib.sha256(material + struct.pack("<I", counter)).digest()
            for off in range(0, len(digest) - 3, 4):
                (u,) = struct.unpack_from("<I", digest, off)
                # map to (-1, 1), avoiding exact zero
                values.append((u + 0.5) / 2**31 - 1.0)
                if len(values) == self.dim:
                    break
            counter += 1
        self._token_cache[token] = values
        return values

    def encode_batch(self, texts) -> list[list[float]]:
        out = []
        for text in texts:
            tokens = simple_tokens(text)
            if not tokens:
                raise ExportError(f"cannot encode an empty sentence: {text!r}")
            acc = [0.0] * self.dim
            for tok in tokens:
                vec = self._token_vector(tok)
                for i in range(self.dim):
                    acc[i] += vec[i]
            norm = math.sqrt(sum(v * v for v in acc)) or 1.0
            out.append([v / (len(tokens) * norm) * len(tokens) for v in acc])
        return out


class SentenceTransformerEncoder:
    """Pretrained encoder via sentence-transformers; CLS or mean pooling."""

    def __init__(self, model_name: str, device: str = "cpu", pooling: str = "mean"):
        if pooling not in ("mean", "cls"):
            raise ExportError(f"pooling must be 'mean' or 'cls', got {pooling!r}")
        try:
            from sentence_transformers import SentenceTransformer, models
        except ImportError as exc:
            raise ExportError(
                "sentence-transformers is not installed; install the 'models' "
                "extra or use the hash:<dim> encoder") from exc
        try:
            word = models.Transformer(model_name)
            pool = models.Pooling(
                word.get_word_embedding_dimension(),
                pooling_mode_mean_tokens=pooling == "mean",
                pooling_mode_cls_token=pooling == "cls",
                pooling_mode_max_tokens=False,
            )
            self._model = SentenceTransformer(modules=[word, pool], device=device)
        except Exception as exc:  # model resolution/download failures
            raise ExportError(f"cannot load encoder {model_name!r}: {exc}") from exc
        self.dim = self._model.get_sentence_embedding_dimension()

    def encode_batch(self, texts) -> list[list[float]]:
        embeddings = self._model.encode(list(texts), convert_to_numpy=True,
                                        show_progress_bar=False)
        return [row.tolist() for row in embeddings]


def make_encoder(model: str, device: str = "cpu", pooling: str = "mean"):
    """Resolve a model identifier: 'hash:<dim>' or a sentence-transformers name."""
    if model.startswith("hash:"):
        try:
            dim = int(model.split(":", 1)[1])
        except ValueError as exc:
            raise ExportError(f"bad hash encoder spec {model!r}") from exc
        return HashEncoder(dim)
    if model == "hash":
        return HashEncoder()
    return SentenceTransformerEncoder(model, device=device, pooling=pooling)
