"""Training-pair distribution diagnostics and embedding-quality metrics.

Quantifies how mined pairs differ from the identical-positive / random-negative
convention (mean lexical overlap per side, cosine histograms per side), plus
alignment, uniformity, and Spearman evaluation on gold-scored sentence pairs.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.distance import pdist
from scipy.special import logsumexp
from scipy.stats import rankdata

from .corpus_store import tokenize
from .errors import DataError
from .similarity import cosine, lexical_overlap

log = logging.getLogger("debcse.analysis")

HIST_BINS = 40
UNIT_NORM_TOL = 1e-6


@dataclass
class BiasReport:
    mean_overlap_pos: float
    mean_overlap_neg: float
    hist_pos: np.ndarray   # (HIST_BINS,) counts
    hist_neg: np.ndarray
    bin_edges: np.ndarray  # (HIST_BINS + 1,) shared edges over [-1, 1]
    n_pos: int
    n_neg: int

    def as_dict(self) -> dict:
        return {
            "mean_overlap_pos": self.mean_overlap_pos,
            "mean_overlap_neg": self.mean_overlap_neg,
            "n_pos": self.n_pos,
            "n_neg": self.n_neg,
            "hist_pos": [int(c) for c in self.hist_pos],
            "hist_neg": [int(c) for c in self.hist_neg],
            "bin_edges": [float(e) for e in self.bin_edges],
        }


def _side_stats(pairs, vec_fn, multiplicity: bool):
    overlaps = []
    cosines = []
    for text_a, text_b in pairs:
        overlaps.append(lexical_overlap(tokenize(text_a), tokenize(text_b),
                                        multiplicity=multiplicity))
        if vec_fn is not None:
            cosines.append(cosine(vec_fn(text_a), vec_fn(text_b)))
    counts, edges = np.histogram(np.asarray(cosines), bins=HIST_BINS, range=(-1.0, 1.0))
    return float(np.mean(overlaps)), counts, edges, len(pairs)


def bias_report(pairs_pos, pairs_neg, vec_fn=None, multiplicity: bool = False) -> BiasReport:
    """Surface and semantic distribution statistics for both pair sides.

    pairs_* are (text, text) sequences; vec_fn maps a text to its embedding
    for the cosine histograms (None skips them, leaving zero counts).
    """
    if not pairs_pos or not pairs_neg:
        raise DataError("bias report needs non-empty positive and negative pair lists")
    mean_pos, hist_pos, edges, n_pos = _side_stats(pairs_pos, vec_fn, multiplicity)
    mean_neg, hist_neg, _, n_neg = _side_stats(pairs_neg, vec_fn, multiplicity)
    return BiasReport(
        mean_overlap_pos=mean_pos,
        mean_overlap_neg=mean_neg,
        hist_pos=hist_pos,
        hist_neg=hist_neg,
        bin_edges=edges,
        n_pos=n_pos,
        n_neg=n_neg,
    )


def write_histogram_csv(path, counts, edges) -> None:
    lines = ["bin_lo,bin_hi,count"]
    for lo, hi, c in zip(edges[:-1], edges[1:], counts):
        lines.append(f"{lo!r},{hi!r},{int(c)}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _require_unit(vecs: np.ndarray, what: str) -> np.ndarray:
    vecs = np.asarray(vecs, dtype=np.float64)
    norms = np.linalg.norm(vecs, axis=-1)
    if np.abs(norms - 1.0).max() > UNIT_NORM_TOL:
        raise ValueError(f"{what} must be unit-normalized (max |norm-1| = "
                         f"{np.abs(norms - 1.0).max():.2e})")
    return vecs


def alignment(pair_vecs) -> float:
    """Mean squared Euclidean distance between unit-normalized positive pairs."""
    pair_vecs = np.asarray(pair_vecs, dtype=np.float64)
    if pair_vecs.ndim != 3 or pair_vecs.shape[0] == 0 or pair_vecs.shape[1] != 2:
        raise ValueError(f"expected a non-empty (n, 2, d) array, got {pair_vecs.shape}")
    _require_unit(pair_vecs, "alignment inputs")
    diffs = pair_vecs[:, 0, :] - pair_vecs[:, 1, :]
    return float(np.mean(np.sum(diffs * diffs, axis=1)))


def uniformity(vecs) -> float:
    """log mean over distinct pairs of exp(-2 * squared distance).

    Lower (more negative) means better dispersed over the unit sphere; the
    value is 0 when every vector coincides.
    """
    vecs = np.asarray(vecs, dtype=np.float64)
    if vecs.ndim != 2 or vecs.shape[0] < 2:
        raise ValueError("uniformity needs at least two vectors")
    _require_unit(vecs, "uniformity inputs")
    sq = pdist(vecs, metric="sqeuclidean")
    return float(logsumexp(-2.0 * sq) - np.log(sq.size))


def spearman(pred, gold) -> float:
    """Pearson correlation of the average-tie ranks of the two lists."""
    pred = np.asarray(pred, dtype=np.float64)
    gold = np.asarray(gold, dtype=np.float64)
    if pred.shape != gold.shape or pred.ndim != 1 or pred.size < 2:
        raise ValueError("spearman needs two equal-length lists with >= 2 entries")
    if np.all(pred == pred[0]) or np.all(gold == gold[0]):
        raise ValueError("spearman is undefined for constant input")
    r_pred = rankdata(pred)
    r_gold = rankdata(gold)
    return float(np.corrcoef(r_pred, r_gold)[0, 1])


@dataclass
class StsDataset:
    """Gold-scored sentence pairs; scores lie in [0, 5]."""

    pairs: list  # (sentence_a, sentence_b, gold)

    def __len__(self) -> int:
        return len(self.pairs)


def load_sts(path) -> StsDataset:
    """Parse a tab-separated file with gold_score, sentence_a, sentence_b columns."""
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    pairs = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise DataError(f"{path}:{lineno}: expected 3 tab-separated columns, got {len(parts)}")
        try:
            gold = float(parts[0])
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: bad gold score {parts[0]!r}") from exc
        if not 0.0 <= gold <= 5.0:
            raise DataError(f"{path}:{lineno}: gold score {gold} outside [0, 5]")
        pairs.append((parts[1], parts[2], gold))
    if not pairs:
        raise DataError(f"{path}: no sentence pairs")
    return StsDataset(pairs=pairs)


def eval_sts(dataset: StsDataset, vec_fn) -> float:
    """Spearman correlation between pairwise embedding cosine and gold scores."""
    if len(dataset) < 2:
        raise DataError("evaluation needs at least two pairs")
    pred = [cosine(vec_fn(a), vec_fn(b)) for a, b, _ in dataset.pairs]
    gold = [g for _, _, g in dataset.pairs]
    return spearman(pred, gold)


def sts_alignment_uniformity(dataset: StsDataset, vec_fn,
                             pos_threshold: float = 4.0) -> dict:
    """Alignment on pairs scored at or above pos_threshold, uniformity over
    every sentence mentioned in the dataset; embeddings are unit-normalized
    here before the metrics see them."""
    def unit(v):
        v = np.asarray(v, dtype=np.float64)
        n = np.linalg.norm(v)
        if n == 0.0:
            raise DataError("zero-norm embedding in evaluation data")
        return v / n

    pos_pairs = [(a, b) for a, b, g in dataset.pairs if g >= pos_threshold]
    if not pos_pairs:
        raise DataError(f"no pairs with gold >= {pos_threshold} for alignment")
    pair_vecs = np.stack([
        np.stack([unit(vec_fn(a)), unit(vec_fn(b))]) for a, b in pos_pairs
    ])
    seen: dict[str, np.ndarray] = {}
    for a, b, _ in dataset.pairs:
        for text in (a, b):
            if text not in seen:
                seen[text] = unit(vec_fn(text))
    all_vecs = np.stack(list(seen.values()))
    return {
        "alignment": alignment(pair_vecs),
        "uniformity": uniformity(all_vecs),
        "n_positive_pairs": len(pos_pairs),
        "n_sentences": int(all_vecs.shape[0]),
        "pos_threshold": pos_threshold,
    }
