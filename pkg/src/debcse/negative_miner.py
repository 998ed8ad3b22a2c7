"""Hard-negative mining: semantic band filtering plus propensity-weighted sampling.

For each anchor, candidate negatives are the sentences whose embedding cosine
with the anchor falls inside a configured band (too-low cosines are trivially
easy negatives, too-high ones are probable false negatives). Each pool member
is then scored by surface and semantic similarity and sampled in proportion
to a blend that prefers high surface but low semantic similarity.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .corpus_store import Corpus, EmbeddingMatrix
from .encoder import STREAM_NEGATIVE_DRAW, STREAM_POOL_SUBSAMPLE, stream_rng
from .similarity import (
    ScoredCandidate,
    edit_distance,
    edit_distances_to_many,
    semantic_scores_from_cosines,
    softmax,
    surface_scores_from_edits,
)

log = logging.getLogger("debcse.negatives")

_PAD = -1


@dataclass
class NegativePoolConfig:
    band_lo: float = 0.25
    band_hi: float = 0.75
    pool_cap: int = 64
    lambda_n: float = 0.8
    m: int = 2
    seed: int = 0
    length_normalized_surface: bool = False
    char_level_edit: bool = False

    def validate(self) -> None:
        if not 0.0 <= self.band_lo < self.band_hi <= 1.0:
            raise ValueError(f"need 0 <= band_lo < band_hi <= 1, got [{self.band_lo}, {self.band_hi}]")
        if not 1 <= self.m <= self.pool_cap:
            raise ValueError(f"need 1 <= m <= pool_cap, got m={self.m}, pool_cap={self.pool_cap}")
        if not 0.0 <= self.lambda_n <= 1.0:
            raise ValueError(f"lambda_n must be in [0, 1], got {self.lambda_n}")


@dataclass
class NegativeCandidatePool:
    anchor_id: int
    members: list[ScoredCandidate]
    p_neg: np.ndarray


@dataclass
class MinedNegatives:
    anchor_id: int
    negative_ids: list[int]
    probabilities: list[float]
    cosines: list[float]


@dataclass
class MiningStats:
    anchors_total: int = 0
    anchors_skipped: int = 0
    pools_truncated: int = 0
    pools_short: int = 0  # fewer members than m; whole pool returned


def ipw_negative_probability(s_sur, s_sem, lambda_n: float) -> np.ndarray:
    """Blend surface similarity with semantic dissimilarity, then sharpen.

    blended_j = (1 - lambda_n) * s_sur_j + lambda_n * (1 - s_sem_j), followed
    by a softmax so sampling concentrates on the most informative candidates.
    """
    s_sur = np.asarray(s_sur, dtype=np.float64)
    s_sem = np.asarray(s_sem, dtype=np.float64)
    if s_sur.size == 0 or s_sur.shape != s_sem.shape:
        raise ValueError("s_sur and s_sem must be equal-length non-empty lists")
    if not 0.0 <= lambda_n <= 1.0:
        raise ValueError(f"lambda_n must be in [0, 1], got {lambda_n}")
    blended = (1.0 - lambda_n) * s_sur + lambda_n * (1.0 - s_sem)
    return softmax(blended)


def draw_without_replacement(rng: np.random.Generator, p: np.ndarray, m: int) -> list[int]:
    """m sequential draws, renormalizing the remaining mass after each one."""
    p = np.asarray(p, dtype=np.float64).copy()
    picked: list[int] = []
    for _ in range(min(m, p.size)):
        total = p.sum()
        cum = np.cumsum(p / total)
        cum[-1] = 1.0  # guard against float drift at the top end
        idx = int(np.searchsorted(cum, rng.random(), side="right"))
        picked.append(idx)
        p[idx] = 0.0
    return picked


class _MiningContext:
    """Shared read-only state for per-anchor pool construction."""

    def __init__(self, corpus: Corpus, emb: EmbeddingMatrix):
        if len(corpus) != emb.count:
            raise ValueError(
                f"corpus has {len(corpus)} sentences but embedding matrix has {emb.count} rows"
            )
        self.corpus = corpus
        self.unit = emb.unit_rows()
        vocab = {tok: i for i, tok in enumerate(corpus.vocabulary())}
        self.token_ids = [
            np.array([vocab[t] for t in s.tokens], dtype=np.int64) for s in corpus
        ]
        self.lens = np.array([len(ids) for ids in self.token_ids], dtype=np.int64)

    def cosines_from(self, anchor_id: int) -> np.ndarray:
        return np.clip(self.unit @ self.unit[anchor_id], -1.0, 1.0)

    def edit_distances(self, anchor_id: int, member_ids: np.ndarray) -> np.ndarray:
        a = self.token_ids[anchor_id]
        lens = self.lens[member_ids]
        lmax = int(lens.max())
        rows = np.full((len(member_ids), lmax), _PAD, dtype=np.int64)
        for r, sid in enumerate(member_ids):
            rows[r, : lens[r]] = self.token_ids[sid]
        return edit_distances_to_many(a, rows, lens)


def build_pool(
    anchor_id: int,
    corpus: Corpus,
    emb: EmbeddingMatrix,
    cfg: NegativePoolConfig,
    *,
    ctx: _MiningContext | None = None,
    stats: MiningStats | None = None,
) -> NegativeCandidatePool | None:
    """Band-filter, cap, and score the negative candidates pool for one anchor.

    Returns None when no sentence falls inside the band (the anchor is
    skipped, not a fatal condition). Band bounds are inclusive.
    """
    cfg.validate()
    if ctx is None:
        ctx = _MiningContext(corpus, emb)
    cos = ctx.cosines_from(anchor_id)
    in_band = (cos >= cfg.band_lo) & (cos <= cfg.band_hi)
    in_band[anchor_id] = False
    member_ids = np.flatnonzero(in_band)
    if member_ids.size == 0:
        log.debug("anchor %d: empty band, skipped", anchor_id)
        return None
    if member_ids.size > cfg.pool_cap:
        # uniform sub-sampling: trimming an over-full band by similarity would
        # reintroduce the bias the weighting step is meant to control
        rng = stream_rng(cfg.seed, STREAM_POOL_SUBSAMPLE, anchor_id)
        member_ids = np.sort(rng.choice(member_ids, size=cfg.pool_cap, replace=False))
        if stats is not None:
            stats.pools_truncated += 1

    if cfg.char_level_edit:
        anchor_tokens = corpus[anchor_id].tokens
        edits = np.array(
            [edit_distance(anchor_tokens, corpus[int(j)].tokens, char_level=True)
             for j in member_ids],
            dtype=np.float64,
        )
    else:
        edits = ctx.edit_distances(anchor_id, member_ids).astype(np.float64)
    member_cos = cos[member_ids]
    s_sur = surface_scores_from_edits(
        edits,
        lengths_a=ctx.lens[member_ids],
        length_b=int(ctx.lens[anchor_id]),
        length_normalized=cfg.length_normalized_surface,
    )
    s_sem = semantic_scores_from_cosines(member_cos)
    p_neg = ipw_negative_probability(s_sur, s_sem, cfg.lambda_n)
    members = [
        ScoredCandidate(
            candidate_id=int(sid),
            edit=int(e),
            cosine=float(c),
            s_sur=float(su),
            s_sem=float(se),
        )
        for sid, e, c, su, se in zip(member_ids, edits, member_cos, s_sur, s_sem)
    ]
    return NegativeCandidatePool(anchor_id=anchor_id, members=members, p_neg=p_neg)


def sample_negatives(pool: NegativeCandidatePool, m: int, seed: int) -> MinedNegatives:
    """Draw m distinct negatives from the pool, proportional to p_neg.

    Deterministic given (seed, anchor_id). Pools smaller than m are returned
    whole.
    """
    if not pool.members:
        raise ValueError(f"anchor {pool.anchor_id}: cannot sample from an empty pool")
    if len(pool.members) < m:
        log.debug("anchor %d: pool of %d < m=%d, returning all members",
                  pool.anchor_id, len(pool.members), m)
        picked = list(range(len(pool.members)))
    else:
        rng = stream_rng(seed, STREAM_NEGATIVE_DRAW, pool.anchor_id)
        picked = draw_without_replacement(rng, pool.p_neg, m)
    return MinedNegatives(
        anchor_id=pool.anchor_id,
        negative_ids=[pool.members[i].candidate_id for i in picked],
        probabilities=[float(pool.p_neg[i]) for i in picked],
        cosines=[pool.members[i].cosine for i in picked],
    )


def mine_all_negatives(
    corpus: Corpus,
    emb: EmbeddingMatrix,
    cfg: NegativePoolConfig,
    workers: int = 1,
) -> tuple[list[MinedNegatives], MiningStats]:
    """Mine negatives for every anchor; output ordered by anchor id.

    Deterministic for any worker count: all randomness is keyed by
    (seed, anchor_id) and results are emitted in anchor order.
    """
    cfg.validate()
    ctx = _MiningContext(corpus, emb)
    stats = MiningStats(anchors_total=len(corpus))

    def mine_one(anchor_id: int) -> MinedNegatives | None:
        pool = build_pool(anchor_id, corpus, emb, cfg, ctx=ctx, stats=stats)
        if pool is None:
            return None
        if len(pool.members) < cfg.m:
            stats.pools_short += 1
        return sample_negatives(pool, cfg.m, cfg.seed)

    anchor_ids = range(len(corpus))
    if workers <= 1:
        results = [mine_one(a) for a in anchor_ids]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool_exec:
            results = list(pool_exec.map(mine_one, anchor_ids))
    mined = [r for r in results if r is not None]
    stats.anchors_skipped = len(results) - len(mined)
    if stats.anchors_skipped:
        log.info("skipped %d/%d anchors with empty candidate bands",
                 stats.anchors_skipped, stats.anchors_total)
    return mined, stats


def uniform_random_negatives(
    corpus: Corpus, m: int, seed: int
) -> list[MinedNegatives]:
    """Baseline: m uniformly random non-self negatives per anchor.

    Used by the bias diagnostics to contrast propensity-weighted mining with
    the plain in-batch sampling convention.
    """
    n = len(corpus)
    if n < 2:
        raise ValueError("need at least two sentences for random negatives")
    out = []
    for anchor_id in range(n):
        rng = stream_rng(seed, STREAM_NEGATIVE_DRAW, anchor_id)
        pool = np.arange(n - 1)
        pool[anchor_id:] += 1  # skip self
        ids = rng.choice(pool, size=min(m, n - 1), replace=False)
        out.append(
            MinedNegatives(
                anchor_id=anchor_id,
                negative_ids=[int(i) for i in ids],
                probabilities=[1.0 / (n - 1)] * len(ids),
                cosines=[],
            )
        )
    return out
