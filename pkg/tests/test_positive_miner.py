import json

import numpy as np
import pytest

from debcse.corpus_store import corpus_from_lines, tokenize, top_frequency_words
from debcse.encoder import (
    STREAM_CANDIDATE_GEN,
    EncoderParams,
    encode,
    stream_rng,
)
from debcse.errors import DataError
from debcse.positive_miner import (
    PositiveGenConfig,
    PositiveSampleConfig,
    generate_all_candidates,
    generate_candidates,
    ipw_positive_probability,
    load_external_candidates,
    merge_candidates,
    mine_all_positives,
    sample_positives,
    score_candidates,
)
from debcse.similarity import softmax


@pytest.fixture()
def corpus():
    return corpus_from_lines(
        [
            "the cat sat on the mat",
            "a dog ran through a park",
            "birds fly over the lake",
            "boats drift across open water",
        ],
        min_tokens=3,
        max_tokens=64,
    )


def replay_candidates(anchor, cfg, highfreq):
    """Re-derive the generator's output by replaying its exact RNG schedule."""
    rng = stream_rng(cfg.seed, STREAM_CANDIDATE_GEN, anchor.id)
    out, seen = [], set()
    for _ in range(8 * cfg.candidates_per_anchor):
        if len(out) >= cfg.candidates_per_anchor:
            break
        tokens = list(anchor.tokens)
        if int(rng.integers(0, 2)) == 0:
            lo, hi = cfg.inject_count_range
            for _ in range(int(rng.integers(lo, hi + 1))):
                word = highfreq[int(rng.integers(0, len(highfreq)))]
                pos = int(rng.integers(0, len(tokens) + 1))
                tokens.insert(pos, word)
        else:
            lo, hi = cfg.mask_count_range
            count = min(int(rng.integers(lo, hi + 1)), len(tokens))
            for pos in rng.choice(len(tokens), size=count, replace=False):
                tokens[int(pos)] = cfg.mask_token
        text = " ".join(tokens)
        if text in seen or tuple(tokenize(text)) == anchor.tokens:
            continue
        seen.add(text)
        out.append(text)
    return out


class TestGenerateCandidates:
    def test_replay_matches_generator(self, corpus):
        cfg = PositiveGenConfig(candidates_per_anchor=6, seed=9)
        highfreq = top_frequency_words(corpus, cfg.highfreq_vocab_size)
        for anchor in corpus:
            got = generate_candidates(anchor, corpus, cfg)
            assert got == replay_candidates(anchor, cfg, highfreq)

    def test_every_candidate_is_injection_or_mask(self, corpus):
        cfg = PositiveGenConfig(candidates_per_anchor=8, seed=3)
        for anchor in corpus:
            for text in generate_candidates(anchor, corpus, cfg):
                toks = text.split()
                if cfg.mask_token in toks:
                    assert len(toks) == len(anchor.tokens)  # mask keeps length
                else:
                    assert len(anchor.tokens) + 1 <= len(toks) <= len(anchor.tokens) + 2

    def test_candidates_differ_from_anchor(self, corpus):
        cfg = PositiveGenConfig(seed=1)
        for anchor in corpus:
            for text in generate_candidates(anchor, corpus, cfg):
                assert tuple(tokenize(text)) != anchor.tokens

    def test_candidates_unique(self, corpus):
        cfg = PositiveGenConfig(candidates_per_anchor=8, seed=2)
        for anchor in corpus:
            cands = generate_candidates(anchor, corpus, cfg)
            assert len(set(cands)) == len(cands)

    def test_short_anchor_rejected(self):
        corpus = corpus_from_lines(["one two", "three four five"], min_tokens=2,
                                   max_tokens=64)
        with pytest.raises(ValueError, match="tokens"):
            generate_candidates(corpus[0], corpus, PositiveGenConfig())

    def test_generate_all_skips_short_anchors(self):
        corpus = corpus_from_lines(["a b", "one two three four"], min_tokens=2,
                                   max_tokens=64)
        cands = generate_all_candidates(corpus, PositiveGenConfig(seed=0))
        assert 0 not in cands and 1 in cands

    def test_determinism_across_workers(self, corpus):
        cfg = PositiveGenConfig(seed=4)
        assert generate_all_candidates(corpus, cfg, workers=1) == \
               generate_all_candidates(corpus, cfg, workers=4)


class TestExternalCandidates:
    def test_parse_and_group(self, tmp_path):
        p = tmp_path / "cand.jsonl"
        p.write_text(
            json.dumps({"anchor_id": 0, "candidate": "c one"}) + "\n"
            + json.dumps({"anchor_id": 0, "candidate": "c two"}) + "\n",
            encoding="utf-8",
        )
        got, skipped = load_external_candidates(p, corpus_size=3)
        assert got == {0: ["c one", "c two"]}
        assert skipped == 0

    def test_out_of_range_anchor_skipped(self, tmp_path):
        p = tmp_path / "cand.jsonl"
        p.write_text(json.dumps({"anchor_id": 7, "candidate": "x"}) + "\n",
                     encoding="utf-8")
        got, skipped = load_external_candidates(p, corpus_size=3)
        assert got == {} and skipped == 1

    def test_duplicate_candidate_deduplicated(self, tmp_path):
        p = tmp_path / "cand.jsonl"
        rec = json.dumps({"anchor_id": 1, "candidate": "same text"})
        p.write_text(rec + "\n" + rec + "\n", encoding="utf-8")
        got, skipped = load_external_candidates(p, corpus_size=3)
        assert got == {1: ["same text"]} and skipped == 0

    def test_malformed_records_counted(self, tmp_path):
        p = tmp_path / "cand.jsonl"
        p.write_text('not json\n{"anchor_id": "zero", "candidate": "x"}\n'
                     + json.dumps({"anchor_id": 0, "candidate": "ok"}) + "\n",
                     encoding="utf-8")
        got, skipped = load_external_candidates(p, corpus_size=3)
        assert got == {0: ["ok"]} and skipped == 2

    def test_merge_order_independent(self):
        a = {0: ["b", "a"], 1: ["z"]}
        b = {0: ["c", "a"]}
        assert merge_candidates(a, b) == merge_candidates(b, a) == \
               {0: ["a", "b", "c"], 1: ["z"]}


class TestIpwPositiveProbability:
    def test_lambda_one_orders_by_semantic(self):
        s_sem = np.array([0.1, 0.6, 0.3])
        p = ipw_positive_probability([0.5, 0.2, 0.9], s_sem, 1.0)
        assert np.array_equal(np.argsort(p), np.argsort(s_sem))

    def test_hand_computed_blend(self):
        # 0.2 * (1 - 0.3) + 0.8 * 0.7 = 0.7
        blended = (1 - 0.8) * (1 - 0.3) + 0.8 * 0.7
        assert blended == pytest.approx(0.7, abs=1e-12)
        p = ipw_positive_probability([0.3, 0.3], [0.7, 0.7], 0.8)
        assert p == pytest.approx([0.5, 0.5])

    def test_lambda_endpoints_exact(self):
        rng = np.random.default_rng(8)
        s_sur = rng.uniform(size=6)
        s_sem = rng.uniform(size=6)
        assert np.array_equal(ipw_positive_probability(s_sur, s_sem, 0.0),
                              softmax(1.0 - s_sur))
        assert np.array_equal(ipw_positive_probability(s_sur, s_sem, 1.0),
                              softmax(s_sem))

    def test_duality_with_negative_blend(self):
        from debcse.negative_miner import ipw_negative_probability
        rng = np.random.default_rng(9)
        s_sur = rng.uniform(size=10)
        s_sem = rng.uniform(size=10)
        for lam in (0.0, 0.2, 0.5, 0.8, 1.0):
            pos_blend = (1 - lam) * (1 - s_sur) + lam * s_sem
            neg_blend = (1 - lam) * s_sur + lam * (1 - s_sem)
            assert np.allclose(pos_blend + neg_blend, 1.0, atol=1e-12)
            # sharpened vectors therefore mirror each other's ordering
            p_pos = ipw_positive_probability(s_sur, s_sem, lam)
            p_neg = ipw_negative_probability(s_sur, s_sem, lam)
            assert np.array_equal(np.argsort(p_pos), np.argsort(-p_neg))

    def test_monotonicity(self):
        lam = 0.7
        base = (1 - lam) * (1 - 0.4) + lam * 0.5
        up_sem = (1 - lam) * (1 - 0.4) + lam * 0.6
        up_sur = (1 - lam) * (1 - 0.5) + lam * 0.5
        assert up_sem > base > up_sur


class TestScoreAndSample:
    def _vecs(self, params, texts):
        return [encode(params, tokenize(t)) for t in texts]

    def test_single_candidate(self, corpus):
        params = EncoderParams.init(corpus.freq.keys(), dim=8, seed=0)
        anchor = corpus[0]
        texts = ["the cat sat on a mat"]
        pool = score_candidates(anchor, texts, encode(params, anchor.tokens),
                                self._vecs(params, texts), PositiveSampleConfig())
        assert pool.p_pos == pytest.approx([1.0])

    def test_anchor_identical_candidate_dropped(self, corpus):
        params = EncoderParams.init(corpus.freq.keys(), dim=8, seed=0)
        anchor = corpus[0]
        texts = [anchor.text, "the cat sat on a mat"]
        pool = score_candidates(anchor, texts, encode(params, anchor.tokens),
                                self._vecs(params, texts), PositiveSampleConfig())
        assert pool.texts == ["the cat sat on a mat"]

    def test_all_identical_gives_none(self, corpus):
        params = EncoderParams.init(corpus.freq.keys(), dim=8, seed=0)
        anchor = corpus[0]
        pool = score_candidates(anchor, [anchor.text], encode(params, anchor.tokens),
                                self._vecs(params, [anchor.text]),
                                PositiveSampleConfig())
        assert pool is None

    def test_p_pos_normalized(self, corpus):
        params = EncoderParams.init(corpus.freq.keys(), dim=8, seed=0)
        anchor = corpus[1]
        cands = generate_candidates(anchor, corpus, PositiveGenConfig(seed=2))
        pool = score_candidates(anchor, cands, encode(params, anchor.tokens),
                                self._vecs(params, cands), PositiveSampleConfig())
        assert abs(pool.p_pos.sum() - 1.0) < 1e-9
        assert (pool.p_pos > 0).all()

    def test_sample_determinism_and_exhaustion(self, corpus):
        params = EncoderParams.init(corpus.freq.keys(), dim=8, seed=0)
        anchor = corpus[2]
        cands = generate_candidates(anchor, corpus, PositiveGenConfig(seed=2))
        pool = score_candidates(anchor, cands, encode(params, anchor.tokens),
                                self._vecs(params, cands), PositiveSampleConfig())
        a = sample_positives(pool, m=2, seed=3)
        b = sample_positives(pool, m=2, seed=3)
        assert a.positives == b.positives
        assert len(set(a.positives)) == 2
        whole = sample_positives(pool, m=len(pool.texts) + 5, seed=3)
        assert sorted(whole.positives) == sorted(pool.texts)

    def test_mine_all_positives(self, corpus):
        params = EncoderParams.init(corpus.freq.keys(), dim=8, seed=0)
        cands = generate_all_candidates(corpus, PositiveGenConfig(seed=2))
        mined, stats = mine_all_positives(
            corpus, cands,
            anchor_vec_fn=lambda aid: encode(params, corpus[aid].tokens),
            candidate_vec_fn=lambda aid, text: encode(params, tokenize(text)),
            cfg=PositiveSampleConfig(m=2, seed=7),
        )
        assert len(mined) == len(corpus)
        for rec in mined:
            assert len(rec.positives) == 2
            assert all(tuple(tokenize(t)) != corpus[rec.anchor_id].tokens
                       for t in rec.positives)

    def test_mine_all_workers_deterministic(self, corpus):
        params = EncoderParams.init(corpus.freq.keys(), dim=8, seed=0)
        cands = generate_all_candidates(corpus, PositiveGenConfig(seed=2))
        kwargs = dict(
            anchor_vec_fn=lambda aid: encode(params, corpus[aid].tokens),
            candidate_vec_fn=lambda aid, text: encode(params, tokenize(text)),
            cfg=PositiveSampleConfig(m=2, seed=7),
        )
        one, _ = mine_all_positives(corpus, cands, workers=1, **kwargs)
        four, _ = mine_all_positives(corpus, cands, workers=4, **kwargs)
        assert [(r.anchor_id, r.positives) for r in one] == \
               [(r.anchor_id, r.positives) for r in four]

    def test_embedding_count_mismatch(self, corpus):
        params = EncoderParams.init(corpus.freq.keys(), dim=8, seed=0)
        anchor = corpus[0]
        with pytest.raises(DataError, match="embeddings"):
            score_candidates(anchor, ["a b c"], encode(params, anchor.tokens), [],
                             PositiveSampleConfig())
