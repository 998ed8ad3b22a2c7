import numpy as np
import pytest

from debcse.corpus_store import corpus_from_lines
from debcse.encoder import (
    UNK_TOKEN,
    EncoderParams,
    EncoderSource,
    MatrixSource,
    encode,
    encode_corpus,
    load_checkpoint,
    save_checkpoint,
)
from debcse.errors import DataError
from oracles import encode_scalar


def identity_params(vocab_tokens, dim):
    params = EncoderParams.init(vocab_tokens, dim=dim, seed=0, apply_tanh=False)
    params.proj = np.eye(dim)
    params.proj_bias = np.zeros(dim)
    return params


class TestEncode:
    def test_identity_pipeline_returns_embedding_row(self):
        params = identity_params(["alpha", "beta"], dim=4)
        out = encode(params, ["alpha"])
        assert np.array_equal(out, params.embed_table[params.vocab["alpha"]])

    def test_mean_pooling_is_order_invariant(self):
        params = EncoderParams.init(["a", "b", "c"], dim=6, seed=1)
        assert np.array_equal(encode(params, ["a", "b", "c"]),
                              encode(params, ["c", "a", "b"]))

    def test_matches_double_loop_oracle(self):
        params = EncoderParams.init([f"w{i}" for i in range(10)], dim=8, seed=2)
        rng = np.random.default_rng(3)
        for _ in range(20):
            tokens = [f"w{int(rng.integers(10))}" for _ in range(int(rng.integers(1, 6)))]
            ids = params.token_ids(tokens)
            expected = encode_scalar(params.embed_table.tolist(),
                                     params.proj.tolist(),
                                     params.proj_bias.tolist(),
                                     ids.tolist())
            assert np.allclose(encode(params, tokens), expected, atol=1e-9)

    def test_unknown_tokens_use_reserved_row(self):
        params = identity_params(["known"], dim=3)
        out = encode(params, ["never-seen"])
        assert np.array_equal(out, params.embed_table[0])
        assert params.vocab[UNK_TOKEN] == 0

    def test_empty_sentence_rejected(self):
        params = EncoderParams.init(["a"], dim=2, seed=0)
        with pytest.raises(ValueError):
            encode(params, [])

    def test_init_deterministic(self):
        a = EncoderParams.init(["x", "y"], dim=5, seed=9)
        b = EncoderParams.init(["y", "x"], dim=5, seed=9)
        assert np.array_equal(a.embed_table, b.embed_table)
        assert a.vocab == b.vocab


class TestCheckpoint:
    def test_roundtrip(self, tmp_path):
        corpus = corpus_from_lines(["the cat sat", "a dog ran fast"],
                                   min_tokens=2, max_tokens=64)
        params = EncoderParams.init(corpus.freq.keys(), dim=7, seed=4)
        save_checkpoint(params, tmp_path / "ckpt")
        loaded = load_checkpoint(tmp_path / "ckpt")
        assert loaded.vocab == params.vocab
        assert np.array_equal(loaded.proj, params.proj)
        assert np.array_equal(loaded.proj_bias, params.proj_bias)
        # embed_table goes through 32-bit storage
        assert np.allclose(loaded.embed_table, params.embed_table, atol=1e-6)
        assert loaded.apply_tanh == params.apply_tanh

    def test_encodings_survive_roundtrip(self, tmp_path):
        corpus = corpus_from_lines(["the cat sat", "a dog ran fast"],
                                   min_tokens=2, max_tokens=64)
        params = EncoderParams.init(corpus.freq.keys(), dim=7, seed=4)
        save_checkpoint(params, tmp_path / "ckpt")
        loaded = load_checkpoint(tmp_path / "ckpt")
        for s in corpus:
            assert np.allclose(encode(loaded, s.tokens), encode(params, s.tokens),
                               atol=1e-6)

    def test_corrupt_manifest(self, tmp_path):
        corpus = corpus_from_lines(["the cat sat"], min_tokens=2, max_tokens=64)
        params = EncoderParams.init(corpus.freq.keys(), dim=3, seed=0)
        save_checkpoint(params, tmp_path / "ckpt")
        (tmp_path / "ckpt" / "params.json").write_text("{", encoding="utf-8")
        with pytest.raises(DataError):
            load_checkpoint(tmp_path / "ckpt")


class TestEmbeddingSources:
    def test_encoder_source_embeds_anything(self, small_corpus):
        params = EncoderParams.init(small_corpus.freq.keys(), dim=6, seed=0)
        src = EncoderSource(params, small_corpus)
        assert src.corpus_matrix().count == len(small_corpus)
        v = src.vector_for_id(0)
        assert np.allclose(v, encode(params, small_corpus[0].tokens))
        assert src.vector_for_tokens(["anything"]).shape == (6,)

    def test_matrix_source_is_index_only(self, small_corpus):
        params = EncoderParams.init(small_corpus.freq.keys(), dim=6, seed=0)
        matrix = encode_corpus(params, small_corpus)
        src = MatrixSource(matrix)
        assert src.vector_for_id(1).shape == (6,)
        with pytest.raises(DataError):
            src.vector_for_tokens(["x"])
        with pytest.raises(DataError):
            src.vector_for_id(10_000)
