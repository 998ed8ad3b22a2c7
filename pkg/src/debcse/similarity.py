"""Similarity kernels shared by the miners: token edit distance, lexical
overlap, cosine, and the softmax-normalized surface/semantic scores."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np


@dataclass
class ScoredCandidate:
    """One candidate scored against an anchor.

    s_sur and s_sem are only meaningful after normalization over the full
    candidate set: within a set, sum(1 - s_sur) == 1 and sum(s_sem) == 1.
    """

    candidate_id: int
    edit: int
    cosine: float
    s_sur: float = 0.0
    s_sem: float = 0.0


def edit_distance(a, b, char_level: bool = False) -> int:
    """Levenshtein distance between token lists (unit insert/delete/substitute).

    With char_level=True the distance is computed over the characters of the
    space-joined token sequences instead (ablation mode).
    """
    if char_level:
        a, b = " ".join(a), " ".join(b)
    a, b = list(a), list(b)
    if len(a) < len(b):
        a, b = b, a
    # strip common prefix/suffix; pure cost-1 operations make this safe
    while a and b and a[0] == b[0]:
        a, b = a[1:], b[1:]
    while a and b and a[-1] == b[-1]:
        a, b = a[:-1], b[:-1]
    if not b:
        return len(a)
    prev = list(range(len(b) + 1))
    for i, ai in enumerate(a, start=1):
        curr = [i] + [0] * len(b)
        for j, bj in enumerate(b, start=1):
            cost = 0 if ai == bj else 1
            curr[j] = min(prev[j] + 1, curr[j - 1] + 1, prev[j - 1] + cost)
        prev = curr
    return prev[-1]


def edit_distances_to_many(anchor_ids: np.ndarray, member_rows: np.ndarray,
                           member_lens: np.ndarray) -> np.ndarray:
    """Levenshtein distance from one int-coded token sequence to many.

    member_rows is (P, Lmax) right-padded with a code that never appears in
    anchor_ids (padding never contaminates columns <= the member's length
    because the DP only flows left-to-right). The left-neighbor dependency of
    the classic recurrence is resolved with a running minimum so the whole
    row updates vectorize over the P members.
    """
    p, lmax = member_rows.shape
    cols = np.arange(lmax + 1, dtype=np.int64)
    prev = np.broadcast_to(cols, (p, lmax + 1)).copy()
    t = np.empty_like(prev)
    for i in range(1, len(anchor_ids) + 1):
        cost = (member_rows != anchor_ids[i - 1]).astype(np.int64)
        t[:, 0] = i
        np.minimum(prev[:, 1:] + 1, prev[:, :-1] + cost, out=t[:, 1:])
        # prev[c] = min_{k<=c}(t[k] + c - k), via accumulate of t[k]-k
        prev = np.minimum.accumulate(t - cols, axis=1) + cols
    return prev[np.arange(p), member_lens]


def lexical_overlap(a, b, multiplicity: bool = False) -> float:
    """Shared words divided by the longer sentence's token count.

    Default counts shared words as distinct types present on both sides;
    multiplicity=True counts each shared type min(count_a, count_b) times,
    which makes identical sentences score exactly 1.0 even with repeats.
    """
    if not a and not b:
        raise ValueError("lexical_overlap undefined for two empty token lists")
    if not a or not b:
        return 0.0
    if multiplicity:
        ca, cb = Counter(a), Counter(b)
        shared = sum(min(ca[t], cb[t]) for t in ca.keys() & cb.keys())
    else:
        shared = len(set(a) & set(b))
    return shared / max(len(a), len(b))


def cosine(u, v) -> float:
    """dot(u, v) / (|u||v|), clamped to [-1, 1] against rounding."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError(f"dimension mismatch: {u.shape} vs {v.shape}")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise ValueError("cosine undefined for zero-norm input")
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def softmax(values) -> np.ndarray:
    """exp(v_i - max v) / sum_k exp(v_k - max v); sums to 1 within 1e-9.

    Max-subtraction is a numerical-stability choice only; the result is
    mathematically identical to the raw exponential form.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("softmax of empty list")
    if not np.isfinite(v).all():
        raise ValueError("softmax input contains non-finite values")
    e = np.exp(v - v.max())
    return e / e.sum()


def surface_scores(anchor_tokens, candidate_token_lists, *,
                   length_normalized: bool = False,
                   char_level: bool = False) -> np.ndarray:
    """Per-candidate surface score: 1 - softmax over the edit distances.

    Larger edit distance means a smaller score. length_normalized divides
    each distance by the longer sequence's length before the softmax, which
    keeps the exponentials from saturating on wide distance spreads.
    """
    if not candidate_token_lists:
        raise ValueError("surface_scores requires at least one candidate")
    edits = np.array(
        [edit_distance(anchor_tokens, c, char_level=char_level)
         for c in candidate_token_lists],
        dtype=np.float64,
    )
    if length_normalized:
        la = len(anchor_tokens)
        scale = np.array(
            [max(la, len(c), 1) for c in candidate_token_lists], dtype=np.float64
        )
        edits = edits / scale
    return 1.0 - softmax(edits)


def surface_scores_from_edits(edits, lengths_a=None, length_b: int | None = None,
                              length_normalized: bool = False) -> np.ndarray:
    """surface_scores when the edit distances are already known."""
    edits = np.asarray(edits, dtype=np.float64)
    if edits.size == 0:
        raise ValueError("surface_scores requires at least one candidate")
    if length_normalized:
        if lengths_a is None or length_b is None:
            raise ValueError("length normalization needs both lengths")
        scale = np.maximum(np.maximum(np.asarray(lengths_a, dtype=np.float64), length_b), 1.0)
        edits = edits / scale
    return 1.0 - softmax(edits)


def semantic_scores(anchor_vec, candidate_vecs) -> np.ndarray:
    """Softmax over the cosines between the anchor and each candidate vector."""
    if len(candidate_vecs) == 0:
        raise ValueError("semantic_scores requires at least one candidate")
    cosines = np.array([cosine(anchor_vec, v) for v in candidate_vecs])
    return softmax(cosines)


def semantic_scores_from_cosines(cosines) -> np.ndarray:
    return softmax(np.asarray(cosines, dtype=np.float64))
