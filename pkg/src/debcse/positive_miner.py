"""Positive mining: rule-based candidate generation plus propensity-weighted
sampling that prefers low surface but high semantic similarity.

Built-in candidates come from two seeded noise operations on the anchor
(injecting high-frequency words, masking random tokens); heavier generators
(back-translation, summarization) plug in through the external candidate file
format and are merged with the rule-based ones before scoring.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus_store import Corpus, Sentence, tokenize, top_frequency_words
from .encoder import STREAM_CANDIDATE_GEN, STREAM_POSITIVE_DRAW, stream_rng
from .errors import DataError
from .negative_miner import draw_without_replacement
from .similarity import (
    ScoredCandidate,
    cosine,
    edit_distance,
    semantic_scores,
    softmax,
    surface_scores,
)

log = logging.getLogger("debcse.positives")

MIN_ANCHOR_TOKENS = 3
_RETRY_FACTOR = 8  # attempts budget per requested candidate


@dataclass
class PositiveGenConfig:
    candidates_per_anchor: int = 8
    inject_count_range: tuple[int, int] = (1, 2)
    mask_count_range: tuple[int, int] = (1, 2)
    highfreq_vocab_size: int = 100
    mask_token: str = "[MASK]"
    seed: int = 0

    def validate(self) -> None:
        if self.candidates_per_anchor < 1:
            raise ValueError("candidates_per_anchor must be >= 1")
        for name, (lo, hi) in (("inject", self.inject_count_range),
                               ("mask", self.mask_count_range)):
            if not (1 <= lo <= hi <= 2):
                raise ValueError(f"{name}_count_range must lie within {{1, 2}}, got ({lo}, {hi})")
        if self.highfreq_vocab_size < 1:
            raise ValueError("highfreq_vocab_size must be >= 1")


@dataclass
class PositiveSampleConfig:
    lambda_p: float = 0.8
    m: int = 2
    seed: int = 0
    length_normalized_surface: bool = False
    char_level_edit: bool = False

    def validate(self) -> None:
        if not 0.0 <= self.lambda_p <= 1.0:
            raise ValueError(f"lambda_p must be in [0, 1], got {self.lambda_p}")
        if self.m < 1:
            raise ValueError("m must be >= 1")


@dataclass
class PositiveCandidatePool:
    anchor_id: int
    texts: list[str]
    scored: list[ScoredCandidate]
    p_pos: np.ndarray


@dataclass
class MinedPositives:
    anchor_id: int
    positives: list[str]
    probabilities: list[float]


@dataclass
class PositiveStats:
    anchors_total: int = 0
    anchors_skipped_short: int = 0
    anchors_skipped_empty: int = 0
    candidates_underfilled: int = 0
    anchor_identical_dropped: int = 0


def generate_candidates(anchor: Sentence, corpus: Corpus, cfg: PositiveGenConfig,
                        highfreq: list[str] | None = None) -> list[str]:
    """Produce up to G noised variants of the anchor, deterministically seeded.

    Each candidate comes from one operation: inject 1-2 high-frequency corpus
    words at random positions, or replace 1-2 random tokens with the mask
    token. Variants identical to the anchor or to an earlier candidate are
    regenerated within a bounded retry budget.
    """
    cfg.validate()
    if len(anchor.tokens) < MIN_ANCHOR_TOKENS:
        raise ValueError(
            f"anchor {anchor.id} has {len(anchor.tokens)} tokens; "
            f"candidate generation needs >= {MIN_ANCHOR_TOKENS}"
        )
    if highfreq is None:
        highfreq = top_frequency_words(corpus, cfg.highfreq_vocab_size)
    rng = stream_rng(cfg.seed, STREAM_CANDIDATE_GEN, anchor.id)
    goal = cfg.candidates_per_anchor
    budget = _RETRY_FACTOR * goal
    out: list[str] = []
    seen: set[str] = set()
    for _ in range(budget):
        if len(out) >= goal:
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
    if len(out) < goal:
        log.warning("anchor %d: only %d/%d distinct candidates after retries",
                    anchor.id, len(out), goal)
    return out


def generate_all_candidates(
    corpus: Corpus, cfg: PositiveGenConfig, workers: int = 1,
    stats: PositiveStats | None = None,
) -> dict[int, list[str]]:
    """Rule-based candidates for every eligible anchor, keyed by anchor id."""
    cfg.validate()
    stats = stats if stats is not None else PositiveStats()
    stats.anchors_total = len(corpus)
    highfreq = top_frequency_words(corpus, cfg.highfreq_vocab_size)

    def gen_one(sentence: Sentence) -> tuple[int, list[str]] | None:
        if len(sentence.tokens) < MIN_ANCHOR_TOKENS:
            return None
        cands = generate_candidates(sentence, corpus, cfg, highfreq=highfreq)
        if len(cands) < cfg.candidates_per_anchor:
            stats.candidates_underfilled += 1
        return (sentence.id, cands) if cands else None

    if workers <= 1:
        results = [gen_one(s) for s in corpus]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(gen_one, corpus.sentences))
    stats.anchors_skipped_short = sum(
        1 for s in corpus if len(s.tokens) < MIN_ANCHOR_TOKENS
    )
    return {aid: cands for r in results if r is not None for aid, cands in [r]}


def load_external_candidates(path, corpus_size: int) -> tuple[dict[int, list[str]], int]:
    """Parse a newline-delimited candidate file into an anchor-keyed map.

    Records: {"anchor_id": int, "candidate": str}. Malformed records and
    out-of-range anchor ids are skipped; the skip count is returned so
    callers can surface it.
    """
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DataError(f"cannot read candidate file {path}: {exc}") from exc
    out: dict[int, list[str]] = {}
    skipped = 0
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            anchor_id = rec["anchor_id"]
            candidate = rec["candidate"]
            if not isinstance(anchor_id, int) or not isinstance(candidate, str):
                raise ValueError("wrong field types")
        except (ValueError, KeyError, TypeError):
            skipped += 1
            log.warning("%s:%d: malformed candidate record, skipped", path, lineno)
            continue
        if not 0 <= anchor_id < corpus_size:
            skipped += 1
            log.warning("%s:%d: anchor_id %d outside corpus of %d, skipped",
                        path, lineno, anchor_id, corpus_size)
            continue
        bucket = out.setdefault(anchor_id, [])
        if candidate not in bucket:
            bucket.append(candidate)
    return out, skipped


def merge_candidates(*maps: dict[int, list[str]]) -> dict[int, list[str]]:
    """Union candidate maps; per-anchor lists are deduplicated and sorted so
    the merge result never depends on source order."""
    merged: dict[int, set[str]] = {}
    for cand_map in maps:
        for aid, texts in cand_map.items():
            merged.setdefault(aid, set()).update(texts)
    return {aid: sorted(texts) for aid, texts in merged.items()}


def ipw_positive_probability(s_sur, s_sem, lambda_p: float) -> np.ndarray:
    """Blend surface dissimilarity with semantic similarity, then sharpen.

    blended_j = (1 - lambda_p) * (1 - s_sur_j) + lambda_p * s_sem_j, followed
    by a softmax. The mirror of the negative-side blend: for identical scores
    and equal lambdas the two blended values sum to 1 element-wise.
    """
    s_sur = np.asarray(s_sur, dtype=np.float64)
    s_sem = np.asarray(s_sem, dtype=np.float64)
    if s_sur.size == 0 or s_sur.shape != s_sem.shape:
        raise ValueError("s_sur and s_sem must be equal-length non-empty lists")
    if not 0.0 <= lambda_p <= 1.0:
        raise ValueError(f"lambda_p must be in [0, 1], got {lambda_p}")
    blended = (1.0 - lambda_p) * (1.0 - s_sur) + lambda_p * s_sem
    return softmax(blended)


def score_candidates(
    anchor: Sentence,
    candidate_texts: list[str],
    anchor_vec: np.ndarray,
    candidate_vecs: list[np.ndarray],
    cfg: PositiveSampleConfig,
    stats: PositiveStats | None = None,
) -> PositiveCandidatePool | None:
    """Score a candidate set against its anchor and attach sampling weights.

    Candidates whose token lists are identical to the anchor's are rejected
    (token-level edit distance 0 means an uninformative positive). Returns
    None when nothing survives.
    """
    cfg.validate()
    if len(candidate_texts) != len(candidate_vecs):
        raise DataError(
            f"anchor {anchor.id}: {len(candidate_texts)} candidates but "
            f"{len(candidate_vecs)} embeddings"
        )
    kept_texts: list[str] = []
    kept_tokens: list[list[str]] = []
    kept_vecs: list[np.ndarray] = []
    for text, vec in zip(candidate_texts, candidate_vecs):
        tokens = tokenize(text)
        if tuple(tokens) == anchor.tokens or not tokens:
            if stats is not None:
                stats.anchor_identical_dropped += 1
            continue
        kept_texts.append(text)
        kept_tokens.append(tokens)
        kept_vecs.append(vec)
    if not kept_texts:
        return None
    s_sur = surface_scores(
        list(anchor.tokens), kept_tokens,
        length_normalized=cfg.length_normalized_surface,
        char_level=cfg.char_level_edit,
    )
    cosines = [cosine(anchor_vec, v) for v in kept_vecs]
    s_sem = semantic_scores(anchor_vec, kept_vecs)
    p_pos = ipw_positive_probability(s_sur, s_sem, cfg.lambda_p)
    scored = [
        ScoredCandidate(
            candidate_id=idx,
            edit=edit_distance(list(anchor.tokens), toks, char_level=cfg.char_level_edit),
            cosine=float(c),
            s_sur=float(su),
            s_sem=float(se),
        )
        for idx, (toks, c, su, se) in enumerate(zip(kept_tokens, cosines, s_sur, s_sem))
    ]
    return PositiveCandidatePool(
        anchor_id=anchor.id, texts=kept_texts, scored=scored, p_pos=p_pos
    )


def sample_positives(pool: PositiveCandidatePool, m: int, seed: int) -> MinedPositives:
    """Draw m distinct positives proportional to p_pos; same contract as the
    negative-side sampler."""
    if not pool.texts:
        raise ValueError(f"anchor {pool.anchor_id}: cannot sample from an empty pool")
    if len(pool.texts) < m:
        log.debug("anchor %d: pool of %d < m=%d, returning all members",
                  pool.anchor_id, len(pool.texts), m)
        picked = list(range(len(pool.texts)))
    else:
        rng = stream_rng(seed, STREAM_POSITIVE_DRAW, pool.anchor_id)
        picked = draw_without_replacement(rng, pool.p_pos, m)
    return MinedPositives(
        anchor_id=pool.anchor_id,
        positives=[pool.texts[i] for i in picked],
        probabilities=[float(pool.p_pos[i]) for i in picked],
    )


def mine_all_positives(
    corpus: Corpus,
    candidates_by_anchor: dict[int, list[str]],
    anchor_vec_fn,
    candidate_vec_fn,
    cfg: PositiveSampleConfig,
    workers: int = 1,
) -> tuple[list[MinedPositives], PositiveStats]:
    """Score and sample positives for every anchor with candidates.

    anchor_vec_fn(anchor_id) and candidate_vec_fn(anchor_id, text) supply the
    embeddings; both must come from the same source so the semantic scores
    are comparable.
    """
    cfg.validate()
    stats = PositiveStats(anchors_total=len(candidates_by_anchor))

    def mine_one(anchor_id: int) -> MinedPositives | None:
        texts = candidates_by_anchor[anchor_id]
        anchor = corpus[anchor_id]
        vecs = [candidate_vec_fn(anchor_id, t) for t in texts]
        pool = score_candidates(anchor, texts, anchor_vec_fn(anchor_id), vecs,
                                cfg, stats=stats)
        if pool is None:
            return None
        return sample_positives(pool, cfg.m, cfg.seed)

    anchor_ids = sorted(candidates_by_anchor)
    if workers <= 1:
        results = [mine_one(a) for a in anchor_ids]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool_exec:
            results = list(pool_exec.map(mine_one, anchor_ids))
    mined = [r for r in results if r is not None]
    stats.anchors_skipped_empty = len(results) - len(mined)
    return mined, stats
