"""Contrastive trainer for the toy encoder.

The objective is a symmetric pair of temperature-scaled contrastive terms:
each side of a positive pair must predict the *batch-normalized* embedding of
the other side from its own raw embedding, scored against the anchor's mined
hard negatives plus a sampled set of in-batch negatives. The literal form
excludes the numerator term from the denominator, so individual terms can go
negative; the standard form is available behind a flag.

Gradients are derived by hand (cosine terms, the shared batch-norm statistics,
tanh, the linear projection, and mean pooling into the embedding table) and
checked against central finite differences in the test suite.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .corpus_store import Corpus, tokenize
from .encoder import (
    STREAM_BATCH_ORDER,
    STREAM_INBATCH_PICK,
    EncoderParams,
    stream_rng,
)
from .errors import DataError, TrainingDivergence

log = logging.getLogger("debcse.trainer")


@dataclass
class TrainConfig:
    tau: float = 0.05
    batch_size: int = 64
    m: int = 2
    lr: float = 1e-3
    epochs: int = 1
    seed: int = 0
    include_positive_in_denominator: bool = False
    stop_gradient_on_z: bool = False
    dim: int = 32
    bn_eps: float = 1e-5
    eval_every: int = 125
    max_steps: int | None = None
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def validate(self) -> None:
        if self.tau <= 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")
        if not self.batch_size > self.m >= 1:
            raise ValueError(
                f"need batch_size > m >= 1, got batch_size={self.batch_size}, m={self.m}"
            )
        if self.lr < 0:
            raise ValueError(f"lr must be >= 0, got {self.lr}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.dim < 1:
            raise ValueError(f"dim must be >= 1, got {self.dim}")


@dataclass
class Batch:
    """Token-level view of one training step.

    neg_tokens is N lists of m token lists; inbatch[i] holds the indices of
    the N-m other anchors whose normalized vectors fill row i's denominator.
    """

    anchor_tokens: list
    pos_tokens: list
    neg_tokens: list
    inbatch: np.ndarray  # (N, N-m) int

    @property
    def size(self) -> int:
        return len(self.anchor_tokens)


@dataclass
class BatchTensors:
    h_anchor: np.ndarray  # (N, d)
    h_pos: np.ndarray     # (N, d)
    h_neg: np.ndarray     # (N, m, d)
    z_anchor: np.ndarray
    z_pos: np.ndarray
    z_neg: np.ndarray
    inbatch: np.ndarray   # (N, N-m) int


@dataclass
class Gradients:
    embed_table: np.ndarray
    proj: np.ndarray
    proj_bias: np.ndarray


def batch_normalize(h: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Per-column standardization: (x - mean) / sqrt(variance + eps).

    Population variance, no learnable affine terms. Requires >= 2 rows.
    """
    h = np.asarray(h, dtype=np.float64)
    if h.ndim != 2 or h.shape[0] < 2:
        raise ValueError(f"batch_normalize needs a 2-D input with >= 2 rows, got {h.shape}")
    mu = h.mean(axis=0)
    var = h.var(axis=0)
    return (h - mu) / np.sqrt(var + eps)


def _check_nonzero(vecs, name: str) -> None:
    norms = np.linalg.norm(np.atleast_2d(np.asarray(vecs, dtype=np.float64)), axis=-1)
    if (norms == 0.0).any():
        raise ValueError(f"{name} contains a zero vector; cosine is undefined")


def _cos(u: np.ndarray, v: np.ndarray) -> float:
    return float(u @ v / (np.linalg.norm(u) * np.linalg.norm(v)))


def _logsumexp(terms: np.ndarray) -> float:
    m = terms.max()
    return float(m + np.log(np.exp(terms - m).sum()))


def debias_infonce(z_a, h_p, z_negs, z_inbatch, tau: float,
                   include_positive: bool = False) -> float:
    """One contrastive term: -cos(z_a, h_p)/tau + log-sum-exp of the negatives.

    The denominator sums the mined-negative and in-batch cosine exponentials;
    by default the numerator term is NOT part of it, so the value can be
    negative. Max-subtraction inside the log-sum-exp keeps everything finite
    at small temperatures.
    """
    if tau <= 0:
        raise ValueError(f"tau must be > 0, got {tau}")
    z_a = np.asarray(z_a, dtype=np.float64)
    h_p = np.asarray(h_p, dtype=np.float64)
    z_negs = [np.asarray(v, dtype=np.float64) for v in z_negs]
    z_inbatch = [np.asarray(v, dtype=np.float64) for v in z_inbatch]
    _check_nonzero([z_a], "z_a")
    _check_nonzero([h_p], "h_p")
    if z_negs:
        _check_nonzero(z_negs, "z_negs")
    if z_inbatch:
        _check_nonzero(z_inbatch, "z_inbatch")
    pos = _cos(z_a, h_p) / tau
    den = [_cos(z_a, v) / tau for v in z_negs] + [_cos(z_a, v) / tau for v in z_inbatch]
    if include_positive:
        den.append(pos)
    if not den:
        raise ValueError("denominator needs at least one negative term")
    loss = -pos + _logsumexp(np.array(den))
    if not np.isfinite(loss):
        raise TrainingDivergence("loss", "non-finite contrastive term")
    return loss


class _Forward:
    """Forward pass with every intermediate needed for the backward pass.

    Stacked row layout: [0, N) anchors, [N, 2N) positives, [2N, 2N + N*m)
    mined negatives (row 2N + i*m + k). Batch-norm statistics are shared
    across the whole stack.
    """

    def __init__(self, params: EncoderParams, batch: Batch, cfg: TrainConfig):
        n = batch.size
        m = len(batch.neg_tokens[0]) if batch.neg_tokens else 0
        token_lists = (
            list(batch.anchor_tokens)
            + list(batch.pos_tokens)
            + [toks for row in batch.neg_tokens for toks in row]
        )
        self.n, self.m = n, m
        self.ids = [params.token_ids(toks) for toks in token_lists]
        for r, ids in enumerate(self.ids):
            if ids.size == 0:
                raise ValueError(f"empty token list at stacked row {r}")
        self.lens = np.array([len(i) for i in self.ids], dtype=np.float64)
        self.pooled = np.stack([params.embed_table[i].mean(axis=0) for i in self.ids])
        self.pre = self.pooled @ params.proj.T + params.proj_bias
        self.h = np.tanh(self.pre) if params.apply_tanh else self.pre
        mu = self.h.mean(axis=0)
        var = self.h.var(axis=0)
        self.bn_scale = np.sqrt(var + cfg.bn_eps)
        self.z = (self.h - mu) / self.bn_scale
        self.h_norms = np.linalg.norm(self.h, axis=1)
        self.z_norms = np.linalg.norm(self.z, axis=1)
        if (self.h_norms == 0.0).any() or (self.z_norms == 0.0).any():
            raise TrainingDivergence("encoder output", "zero-norm embedding in batch")
        self.unit_h = self.h / self.h_norms[:, None]
        self.unit_z = self.z / self.z_norms[:, None]

    def views(self, inbatch: np.ndarray) -> BatchTensors:
        n, m, d = self.n, self.m, self.h.shape[1]
        return BatchTensors(
            h_anchor=self.h[:n],
            h_pos=self.h[n:2 * n],
            h_neg=self.h[2 * n:].reshape(n, m, d),
            z_anchor=self.z[:n],
            z_pos=self.z[n:2 * n],
            z_neg=self.z[2 * n:].reshape(n, m, d),
            inbatch=inbatch,
        )


def _loss_terms(fw: _Forward, inbatch: np.ndarray, cfg: TrainConfig):
    """Cosine matrices, per-term softmax weights, and the mean loss."""
    n, m = fw.n, fw.m
    uz, uh = fw.unit_z, fw.unit_h
    uza, uzp = uz[:n], uz[n:2 * n]
    uzn = uz[2 * n:].reshape(n, m, -1)
    c0 = np.einsum("nd,nd->n", uza, uh[n:2 * n])   # cos(z_anchor, h_pos)
    d0 = np.einsum("nd,nd->n", uzp, uh[:n])        # cos(z_pos, h_anchor)
    cn1 = np.einsum("nd,nmd->nm", uza, uzn)        # cos(z_anchor, z_neg)
    cn2 = np.einsum("nd,nmd->nm", uzp, uzn)        # cos(z_pos, z_neg)
    gram_aa = uza @ uza.T
    gram_pa = uzp @ uza.T
    cb1 = np.take_along_axis(gram_aa, inbatch, axis=1)  # (N, N-m)
    cb2 = np.take_along_axis(gram_pa, inbatch, axis=1)

    def lse_and_weights(num, den_blocks):
        den = np.concatenate(den_blocks, axis=1) / cfg.tau
        if cfg.include_positive_in_denominator:
            den = np.concatenate([den, (num / cfg.tau)[:, None]], axis=1)
        mx = den.max(axis=1, keepdims=True)
        e = np.exp(den - mx)
        tot = e.sum(axis=1, keepdims=True)
        lse = (mx + np.log(tot)).ravel()
        return lse, e / tot

    lse1, w1 = lse_and_weights(c0, [cn1, cb1])
    lse2, w2 = lse_and_weights(d0, [cn2, cb2])
    term1 = -c0 / cfg.tau + lse1
    term2 = -d0 / cfg.tau + lse2
    loss = float((term1 + term2).mean())
    return loss, dict(c0=c0, d0=d0, cn1=cn1, cn2=cn2, cb1=cb1, cb2=cb2, w1=w1, w2=w2)


def forward_batch(params: EncoderParams, batch: Batch, cfg: TrainConfig) -> BatchTensors:
    return _Forward(params, batch, cfg).views(batch.inbatch)


def batch_loss(params: EncoderParams, batch: Batch, cfg: TrainConfig) -> float:
    """Loss only, via the same forward pass the gradients use."""
    fw = _Forward(params, batch, cfg)
    loss, _ = _loss_terms(fw, batch.inbatch, cfg)
    return loss


def alternative_norm_loss(bt: BatchTensors, cfg: TrainConfig) -> float:
    """Mean over the batch of both prediction directions of each pair.

    Works from precomputed tensors so the vectorized value can be compared
    against a scalar re-evaluation in tests.
    """
    n, m, d = bt.h_neg.shape
    losses = []
    z_all = bt.z_anchor
    for i in range(n):
        negs = [bt.z_neg[i, k] for k in range(m)]
        others = [z_all[j] for j in bt.inbatch[i]]
        losses.append(
            debias_infonce(bt.z_anchor[i], bt.h_pos[i], negs, others, cfg.tau,
                           include_positive=cfg.include_positive_in_denominator)
            + debias_infonce(bt.z_pos[i], bt.h_anchor[i], negs, others, cfg.tau,
                             include_positive=cfg.include_positive_in_denominator)
        )
    return float(np.mean(losses))


def gradients(params: EncoderParams, batch: Batch, cfg: TrainConfig):
    """Loss and analytic gradients for one batch.

    Gradients flow through both arguments of every cosine and through the
    shared batch-norm statistics unless stop_gradient_on_z is set (then the
    normalized vectors are treated as constants, BYOL-style, and only the raw
    numerator embeddings train).
    """
    cfg.validate()
    fw = _Forward(params, batch, cfg)
    n, m = fw.n, fw.m
    loss, t = _loss_terms(fw, batch.inbatch, cfg)

    r_total, d = fw.h.shape
    g_z = np.zeros((r_total, d))
    g_h = np.zeros((r_total, d))
    uz, uh = fw.unit_z, fw.unit_h
    zn, hn = fw.z_norms, fw.h_norms
    inv_n_tau = 1.0 / (n * cfg.tau)

    def add_pair(g_left, left_idx, g_right, right_idx, w, cos_lr,
                 unit_left, unit_right, norm_left, norm_right):
        # w, cos_lr: (k,); indices: (k,) rows into the stacked arrays
        gl = (w[:, None]) * (unit_right - cos_lr[:, None] * unit_left) / norm_left[:, None]
        gr = (w[:, None]) * (unit_left - cos_lr[:, None] * unit_right) / norm_right[:, None]
        np.add.at(g_left, left_idx, gl)
        np.add.at(g_right, right_idx, gr)

    a_idx = np.arange(n)
    p_idx = n + a_idx
    n_idx = (2 * n + (a_idx[:, None] * m + np.arange(m))).ravel()

    # numerator of each direction; weight may pick up a denominator share
    # when the positive term is included there
    w_c0 = np.full(n, -inv_n_tau)
    w_d0 = np.full(n, -inv_n_tau)
    if cfg.include_positive_in_denominator:
        w_c0 += t["w1"][:, -1] * inv_n_tau
        w_d0 += t["w2"][:, -1] * inv_n_tau
    add_pair(g_z, a_idx, g_h, p_idx, w_c0, t["c0"], uz[a_idx], uh[p_idx], zn[a_idx], hn[p_idx])
    add_pair(g_z, p_idx, g_h, a_idx, w_d0, t["d0"], uz[p_idx], uh[a_idx], zn[p_idx], hn[a_idx])

    # mined-negative denominator terms, both directions
    w1n = t["w1"][:, :m] * inv_n_tau
    w2n = t["w2"][:, :m] * inv_n_tau
    rep_a = np.repeat(a_idx, m)
    rep_p = np.repeat(p_idx, m)
    add_pair(g_z, rep_a, g_z, n_idx, w1n.ravel(), t["cn1"].ravel(),
             uz[rep_a], uz[n_idx], zn[rep_a], zn[n_idx])
    add_pair(g_z, rep_p, g_z, n_idx, w2n.ravel(), t["cn2"].ravel(),
             uz[rep_p], uz[n_idx], zn[rep_p], zn[n_idx])

    # in-batch denominator terms
    k_in = batch.inbatch.shape[1]
    w1b = t["w1"][:, m:m + k_in] * inv_n_tau
    w2b = t["w2"][:, m:m + k_in] * inv_n_tau
    rows_a = np.repeat(a_idx, k_in)
    rows_p = np.repeat(p_idx, k_in)
    cols = batch.inbatch.ravel()
    add_pair(g_z, rows_a, g_z, cols, w1b.ravel(), t["cb1"].ravel(),
             uz[rows_a], uz[cols], zn[rows_a], zn[cols])
    add_pair(g_z, rows_p, g_z, cols, w2b.ravel(), t["cb2"].ravel(),
             uz[rows_p], uz[cols], zn[rows_p], zn[cols])

    # batch-norm backward: z_r = (h_r - mean) / s with shared column stats
    if cfg.stop_gradient_on_z:
        dh = g_h
    else:
        col_mean_g = g_z.mean(axis=0)
        col_mean_gz = (g_z * fw.z).mean(axis=0)
        dh = g_h + (g_z - col_mean_g - fw.z * col_mean_gz) / fw.bn_scale

    dpre = dh * (1.0 - fw.h ** 2) if params.apply_tanh else dh
    g_bias = dpre.sum(axis=0)
    g_proj = dpre.T @ fw.pooled
    dpooled = dpre @ params.proj

    g_embed = np.zeros_like(params.embed_table)
    flat_ids = np.concatenate(fw.ids)
    flat_rows = np.repeat(np.arange(r_total), fw.lens.astype(np.int64))
    np.add.at(g_embed, flat_ids, dpooled[flat_rows] / fw.lens[flat_rows, None])

    grads = Gradients(embed_table=g_embed, proj=g_proj, proj_bias=g_bias)
    for name, arr in (("embed_table", g_embed), ("proj", g_proj), ("proj_bias", g_bias)):
        if not np.isfinite(arr).all():
            raise TrainingDivergence(name, "non-finite gradient")
    return loss, grads


class Adam:
    def __init__(self, params: EncoderParams, cfg: TrainConfig):
        self.cfg = cfg
        self.t = 0
        self.state = {
            name: (np.zeros_like(arr), np.zeros_like(arr))
            for name, arr in (("embed_table", params.embed_table),
                              ("proj", params.proj),
                              ("proj_bias", params.proj_bias))
        }

    def step(self, params: EncoderParams, grads: Gradients) -> None:
        cfg = self.cfg
        self.t += 1
        bc1 = 1.0 - cfg.adam_beta1 ** self.t
        bc2 = 1.0 - cfg.adam_beta2 ** self.t
        for name in self.state:
            g = getattr(grads, name)
            p = getattr(params, name)
            m1, m2 = self.state[name]
            m1 *= cfg.adam_beta1
            m1 += (1.0 - cfg.adam_beta1) * g
            m2 *= cfg.adam_beta2
            m2 += (1.0 - cfg.adam_beta2) * g * g
            p -= cfg.lr * (m1 / bc1) / (np.sqrt(m2 / bc2) + cfg.adam_eps)
            if not np.isfinite(p).all():
                raise TrainingDivergence(name, f"after optimizer step {self.t}")


@dataclass
class TrainStats:
    examples: int = 0
    anchors_skipped: int = 0
    positives_skipped: int = 0
    steps: int = 0


@dataclass
class TrainResult:
    params: EncoderParams          # best-dev params when a dev hook ran, else final
    final_params: EncoderParams
    loss_curve: list               # [(step, loss)]
    dev_curve: list                # [(step, metric)]
    stats: TrainStats


def build_examples(corpus: Corpus, positives_by_anchor: dict, negatives_by_anchor: dict,
                   stats: TrainStats, m: int | None = None):
    """One training example per (anchor, mined positive), carrying the
    anchor's mined negatives. Anchors missing either side, or with fewer than
    m mined negatives (short pools), are skipped."""
    examples = []
    for anchor_id in sorted(positives_by_anchor):
        if anchor_id not in negatives_by_anchor:
            stats.anchors_skipped += 1
            continue
        neg_ids = negatives_by_anchor[anchor_id]
        if not neg_ids or (m is not None and len(neg_ids) < m):
            stats.anchors_skipped += 1
            continue
        if m is not None:
            neg_ids = neg_ids[:m]
        neg_tokens = [list(corpus[j].tokens) for j in neg_ids]
        anchor_tokens = list(corpus[anchor_id].tokens)
        for text in positives_by_anchor[anchor_id]:
            pos_tokens = tokenize(text)
            if not pos_tokens:
                stats.positives_skipped += 1
                continue
            examples.append((anchor_tokens, pos_tokens, neg_tokens))
    for anchor_id in negatives_by_anchor:
        if anchor_id not in positives_by_anchor:
            stats.anchors_skipped += 1
    return examples


def train(
    corpus: Corpus,
    positives_by_anchor: dict,
    negatives_by_anchor: dict,
    cfg: TrainConfig,
    dev_eval=None,
    initial_params: EncoderParams | None = None,
) -> TrainResult:
    """Adam-optimize the toy encoder on mined pairs.

    Deterministic given cfg.seed: batch order, in-batch negative choice, and
    initialization all come from seed-keyed streams. When dev_eval is given
    it is called every cfg.eval_every steps with the current params and the
    best-scoring snapshot is returned as the selected checkpoint.
    """
    cfg.validate()
    stats = TrainStats()
    examples = build_examples(corpus, positives_by_anchor, negatives_by_anchor,
                              stats, m=cfg.m)
    stats.examples = len(examples)
    if len(examples) < cfg.batch_size:
        raise DataError(
            f"{len(examples)} training examples cannot fill one batch of "
            f"{cfg.batch_size}; lower --batch or mine more anchors"
        )
    params = initial_params.copy() if initial_params is not None else EncoderParams.init(
        corpus.freq.keys(), cfg.dim, cfg.seed
    )
    optimizer = Adam(params, cfg)
    n, m = cfg.batch_size, cfg.m
    loss_curve: list[tuple[int, float]] = []
    dev_curve: list[tuple[int, float]] = []
    best_metric = -np.inf
    best_params: EncoderParams | None = None
    step = 0
    done = False
    for epoch in range(cfg.epochs):
        if done:
            break
        order = stream_rng(cfg.seed, STREAM_BATCH_ORDER, epoch).permutation(len(examples))
        for start in range(0, len(examples) - n + 1, n):
            step += 1
            rows = [examples[i] for i in order[start:start + n]]
            rng = stream_rng(cfg.seed, STREAM_INBATCH_PICK, step)
            inbatch = np.stack([
                rng.choice(np.delete(np.arange(n), i), size=n - m, replace=False)
                for i in range(n)
            ])
            batch = Batch(
                anchor_tokens=[r[0] for r in rows],
                pos_tokens=[r[1] for r in rows],
                neg_tokens=[r[2] for r in rows],
                inbatch=inbatch,
            )
            loss, grads = gradients(params, batch, cfg)
            optimizer.step(params, grads)
            loss_curve.append((step, loss))
            if dev_eval is not None and step % cfg.eval_every == 0:
                metric = float(dev_eval(params))
                dev_curve.append((step, metric))
                if metric > best_metric:
                    best_metric = metric
                    best_params = params.copy()
            if cfg.max_steps is not None and step >= cfg.max_steps:
                done = True
                break
    stats.steps = step
    if dev_eval is not None and step > 0:
        metric = float(dev_eval(params))
        if not dev_curve or dev_curve[-1][0] != step:
            dev_curve.append((step, metric))
        if metric > best_metric:
            best_metric = metric
            best_params = params.copy()
    selected = best_params if best_params is not None else params
    log.info("trained %d steps over %d examples (first loss %.4f, last %.4f)",
             step, stats.examples,
             loss_curve[0][1] if loss_curve else float("nan"),
             loss_curve[-1][1] if loss_curve else float("nan"))
    return TrainResult(params=selected, final_params=params,
                       loss_curve=loss_curve, dev_curve=dev_curve, stats=stats)
