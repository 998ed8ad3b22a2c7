"""Pipeline CLI: reproducible, manifest-logged runs of every stage.

Subcommands: ingest, mine-neg, gen-pos, mine-pos, train, analyze-bias,
eval-sts, align-uniform, sweep. Every run writes its outputs plus exactly one
manifest into a fresh directory; reruns with an identical manifest
determinism block produce byte-identical data outputs at any worker count.
Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import analysis, figures
from .corpus_store import (
    DEFAULT_MAX_TOKENS,
    DEFAULT_MIN_TOKENS,
    ingest,
    read_embeddings,
    read_sidecar,
    tokenize,
)
from .encoder import (
    EncoderParams,
    EncoderSource,
    MatrixSource,
    encode,
    load_checkpoint,
    save_checkpoint,
)
from .errors import DataError, DebcseError
from .manifest import ManifestWriter, fresh_run_dir
from .negative_miner import (
    NegativePoolConfig,
    mine_all_negatives,
    uniform_random_negatives,
)
from .positive_miner import (
    PositiveGenConfig,
    PositiveSampleConfig,
    generate_all_candidates,
    load_external_candidates,
    merge_candidates,
    mine_all_positives,
)
from .trainer import TrainConfig, train

log = logging.getLogger("debcse.cli")

LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING,
              "info": logging.INFO, "debug": logging.DEBUG}


class _Parser(argparse.ArgumentParser):
    """argparse that signals usage errors instead of exiting with code 2."""

    def error(self, message):
        raise UsageError(message, self)


class UsageError(Exception):
    def __init__(self, message, parser=None):
        super().__init__(message)
        self.parser = parser


def _add_common(p, default_seed=0):
    p.add_argument("--out", required=True, help="fresh run directory")
    p.add_argument("--seed", type=int, default=default_seed)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--config", default=None,
                   help="JSON file of flag defaults (explicit flags win)")


def _add_embedding_source(p, with_candidates=False):
    p.add_argument("--embeddings", default=None,
                   help="DEBC embedding file aligned to the corpus")
    p.add_argument("--encoder-checkpoint", default=None,
                   help="trained encoder checkpoint directory")
    p.add_argument("--encoder-seed", type=int, default=None,
                   help="fresh toy encoder with this seed (default: --seed)")
    p.add_argument("--dim", type=int, default=32,
                   help="toy encoder dimension when no checkpoint/file is given")
    if with_candidates:
        p.add_argument("--candidate-embeddings", default=None,
                       help="DEBC rows aligned to the (single) candidate file")


def _add_similarity_opts(p):
    p.add_argument("--edit-level", choices=["token", "char"], default="token")
    p.add_argument("--surface-length-norm", action="store_true",
                   help="divide edit distances by the longer length before the softmax")


def build_parser(suppress_defaults: bool = False) -> _Parser:
    # suppress_defaults builds a shadow parser whose parse result contains
    # only flags the user actually typed, for the config-file merge
    kw = {}

    def d(value):
        return argparse.SUPPRESS if suppress_defaults else value

    parser = _Parser(prog="debcse", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="subcommand", metavar="SUBCOMMAND")

    p = sub.add_parser("ingest", help="filter and tokenize a raw sentence file")
    p.add_argument("--input", required=True)
    p.add_argument("--min-tokens", type=int, default=d(DEFAULT_MIN_TOKENS))
    p.add_argument("--max-tokens", type=int, default=d(DEFAULT_MAX_TOKENS))
    _add_common(p)

    p = sub.add_parser("mine-neg", help="mine hard negatives for every anchor")
    p.add_argument("--corpus", required=True)
    p.add_argument("--band-lo", type=float, default=d(0.25))
    p.add_argument("--band-hi", type=float, default=d(0.75))
    p.add_argument("--pool-cap", type=int, default=d(64))
    p.add_argument("--lambda-n", type=float, default=d(0.8))
    p.add_argument("--m", type=int, default=d(2))
    _add_embedding_source(p)
    _add_similarity_opts(p)
    _add_common(p)

    p = sub.add_parser("gen-pos", help="generate rule-based positive candidates")
    p.add_argument("--corpus", required=True)
    p.add_argument("--candidates-per-anchor", type=int, default=d(8))
    p.add_argument("--highfreq-vocab-size", type=int, default=d(100))
    p.add_argument("--mask-token", default=d("[MASK]"))
    p.add_argument("--inject-counts", default=d("1,2"),
                   help="min,max injected words per candidate (within {1,2})")
    p.add_argument("--mask-counts", default=d("1,2"))
    _add_common(p)

    p = sub.add_parser("mine-pos", help="sample informative positives from candidates")
    p.add_argument("--corpus", required=True)
    p.add_argument("--candidates", action="append", default=None,
                   help="candidate file (repeatable)")
    p.add_argument("--external-candidates", action="append", dest="candidates",
                   help="alias of --candidates for generator-produced files")
    p.add_argument("--lambda-p", type=float, default=d(0.8))
    p.add_argument("--m", type=int, default=d(2))
    _add_embedding_source(p, with_candidates=True)
    _add_similarity_opts(p)
    _add_common(p)

    p = sub.add_parser("train", help="train the toy encoder on mined pairs")
    p.add_argument("--corpus", required=True)
    p.add_argument("--positives", required=True)
    p.add_argument("--negatives", required=True)
    p.add_argument("--tau", type=float, default=d(0.05))
    p.add_argument("--batch", type=int, default=d(64))
    p.add_argument("--m", type=int, default=d(2))
    p.add_argument("--lr", type=float, default=d(1e-3))
    p.add_argument("--epochs", type=int, default=d(1))
    p.add_argument("--dim", type=int, default=d(32))
    p.add_argument("--max-steps", type=int, default=None)
    p.add_argument("--eval-every", type=int, default=d(125))
    p.add_argument("--dev-sts", default=None,
                   help="tab-separated dev pairs; keeps the best-scoring checkpoint")
    p.add_argument("--include-positive-in-denominator", action="store_true")
    p.add_argument("--stop-gradient-on-z", action="store_true")
    _add_common(p)

    p = sub.add_parser("analyze-bias", help="surface/semantic distribution report")
    p.add_argument("--corpus", required=True)
    p.add_argument("--positives", required=True)
    p.add_argument("--negatives", required=True)
    p.add_argument("--baseline", action="store_true",
                   help="also report identical-positive / random-negative pairs")
    p.add_argument("--multiplicity", action="store_true",
                   help="count shared words with multiplicity instead of as types")
    _add_embedding_source(p)
    _add_common(p)

    p = sub.add_parser("eval-sts", help="Spearman correlation on gold-scored pairs")
    p.add_argument("--sts", required=True)
    p.add_argument("--corpus", default=None,
                   help="vocabulary source when using --encoder-seed")
    _add_embedding_source(p)
    _add_common(p)

    p = sub.add_parser("align-uniform", help="alignment and uniformity metrics")
    p.add_argument("--sts", required=True)
    p.add_argument("--corpus", default=None)
    p.add_argument("--pos-threshold", type=float, default=d(4.0))
    _add_embedding_source(p)
    _add_common(p)

    p = sub.add_parser("sweep", help="grid over both sampling weights")
    p.add_argument("--corpus", required=True)
    p.add_argument("--dev-sts", required=True)
    p.add_argument("--lambda-p-grid", default=d("1,0.8,0.6,0.4,0.2,0"))
    p.add_argument("--lambda-n-grid", default=d("1,0.8,0.6,0.4,0.2,0"))
    p.add_argument("--band-lo", type=float, default=d(0.25))
    p.add_argument("--band-hi", type=float, default=d(0.75))
    p.add_argument("--pool-cap", type=int, default=d(64))
    p.add_argument("--m", type=int, default=d(2))
    p.add_argument("--candidates-per-anchor", type=int, default=d(8))
    p.add_argument("--tau", type=float, default=d(0.05))
    p.add_argument("--batch", type=int, default=d(64))
    p.add_argument("--lr", type=float, default=d(1e-3))
    p.add_argument("--epochs", type=int, default=d(1))
    p.add_argument("--dim", type=int, default=d(32))
    p.add_argument("--steps", type=int, default=d(50),
                   help="training steps per grid cell")
    p.add_argument("--include-positive-in-denominator", action="store_true")
    _add_common(p)

    return parser


def _merge_config(argv, args):
    """Overlay: parser defaults < config file < explicitly passed flags."""
    if not getattr(args, "config", None):
        return args
    try:
        file_values = json.loads(Path(args.config).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read config {args.config}: {exc}") from exc
    explicit = vars(build_parser(suppress_defaults=True).parse_args(argv))
    merged = vars(args).copy()
    known = set(merged)
    for key, value in file_values.items():
        key = key.replace("-", "_")
        if key not in known:
            raise UsageError(f"config key {key!r} is not a flag of {args.subcommand}")
        if key not in explicit:
            merged[key] = value
    ns = argparse.Namespace(**merged)
    return ns


def _parse_count_range(text, flag):
    try:
        lo, hi = (int(x) for x in str(text).split(","))
    except ValueError as exc:
        raise UsageError(f"{flag} expects 'min,max', got {text!r}") from exc
    return lo, hi


def _parse_grid(text, flag):
    try:
        values = [float(x) for x in str(text).split(",") if x != ""]
    except ValueError as exc:
        raise UsageError(f"{flag} expects comma-separated numbers") from exc
    if not values:
        raise UsageError(f"{flag} must list at least one value")
    return values


def _load_corpus(path):
    # pipeline corpora were already length-filtered by ingest; any line that
    # would be dropped here would silently shift sentence ids and desync
    # aligned embedding rows, so refuse instead
    corpus = ingest(path, min_tokens=1, max_tokens=10**9)
    if corpus.stats.dropped:
        raise DataError(
            f"{path}: {corpus.stats.dropped} lines tokenize to nothing; "
            "run `debcse ingest` first so sentence ids stay aligned")
    return corpus


def _corpus_source(args, corpus):
    chosen = [x for x in ("embeddings", "encoder_checkpoint") if getattr(args, x, None)]
    if getattr(args, "encoder_seed", None) is not None:
        chosen.append("encoder_seed")
    if len(chosen) > 1:
        raise UsageError("choose one of --embeddings, --encoder-checkpoint, --encoder-seed")
    if getattr(args, "embeddings", None):
        matrix = read_embeddings(args.embeddings)
        if matrix.count != len(corpus):
            raise DataError(
                f"embedding file has {matrix.count} rows but corpus has {len(corpus)}"
            )
        return MatrixSource(matrix, label=f"file:{args.embeddings}")
    if getattr(args, "encoder_checkpoint", None):
        params = load_checkpoint(args.encoder_checkpoint)
        return EncoderSource(params, corpus, label=f"checkpoint:{args.encoder_checkpoint}")
    seed = args.encoder_seed if args.encoder_seed is not None else args.seed
    params = EncoderParams.init(corpus.freq.keys(), dim=args.dim, seed=seed)
    return EncoderSource(params, corpus, label=f"toy-encoder:seed={seed},dim={args.dim}")


def _text_vec_fn(args):
    """text -> vector resolver for evaluation subcommands."""
    if getattr(args, "embeddings", None):
        matrix = read_embeddings(args.embeddings)
        texts = read_sidecar(args.embeddings)
        if len(texts) != matrix.count:
            raise DataError("sidecar line count does not match embedding rows")
        index = {t: i for i, t in enumerate(texts)}

        def vec(text):
            if text not in index:
                raise DataError(f"sentence not present in embedding sidecar: {text!r}")
            return matrix.row(index[text]).astype(np.float64)

        return vec, f"file:{args.embeddings}"
    if getattr(args, "encoder_checkpoint", None):
        params = load_checkpoint(args.encoder_checkpoint)
        label = f"checkpoint:{args.encoder_checkpoint}"
    else:
        if not getattr(args, "corpus", None):
            raise UsageError("--encoder-seed mode needs --corpus for the vocabulary")
        corpus = _load_corpus(args.corpus)
        seed = args.encoder_seed if args.encoder_seed is not None else args.seed
        params = EncoderParams.init(corpus.freq.keys(), dim=args.dim, seed=seed)
        label = f"toy-encoder:seed={seed},dim={args.dim}"

    def vec(text):
        tokens = tokenize(text)
        if not tokens:
            raise DataError(f"sentence tokenizes to nothing: {text!r}")
        return encode(params, tokens)

    return vec, label


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n",
                          encoding="utf-8")


def _write_jsonl(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def _read_jsonl(path):
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    out = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            out.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}:{lineno}: bad record: {exc}") from exc
    return out


def _manifest(args, run_dir, inputs):
    config = {k: v for k, v in sorted(vars(args).items())
              if k not in ("subcommand", "config")}
    return ManifestWriter(run_dir, args.subcommand, config, inputs)


# --------------------------------------------------------------------------
# subcommand implementations


def cmd_ingest(args):
    run_dir = fresh_run_dir(args.out)
    manifest = _manifest(args, run_dir, {"input": args.input})
    corpus = ingest(args.input, args.min_tokens, args.max_tokens)
    (run_dir / "corpus.txt").write_text(
        "".join(s.text + "\n" for s in corpus), encoding="utf-8")
    ranked = sorted(corpus.freq.items(), key=lambda kv: (-kv[1], kv[0]))
    (run_dir / "freq.tsv").write_text(
        "".join(f"{tok}\t{count}\n" for tok, count in ranked), encoding="utf-8")
    stats = vars(corpus.stats).copy()
    stats["sentences"] = len(corpus)
    stats["vocabulary"] = len(corpus.freq)
    _write_json(run_dir / "stats.json", stats)
    for name in ("corpus.txt", "freq.tsv", "stats.json"):
        manifest.add_output(name)
    manifest.write()
    print(f"ingested {len(corpus)} sentences "
          f"(dropped {corpus.stats.dropped}) -> {run_dir}")


def cmd_mine_neg(args):
    run_dir = fresh_run_dir(args.out)
    inputs = {"corpus": args.corpus}
    if args.embeddings:
        inputs["embeddings"] = args.embeddings
    manifest = _manifest(args, run_dir, inputs)
    corpus = _load_corpus(args.corpus)
    source = _corpus_source(args, corpus)
    cfg = NegativePoolConfig(
        band_lo=args.band_lo, band_hi=args.band_hi, pool_cap=args.pool_cap,
        lambda_n=args.lambda_n, m=args.m, seed=args.seed,
        length_normalized_surface=args.surface_length_norm,
        char_level_edit=args.edit_level == "char",
    )
    try:
        cfg.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    mined, stats = mine_all_negatives(corpus, source.corpus_matrix(), cfg,
                                      workers=args.workers)
    _write_jsonl(run_dir / "negatives.jsonl", (
        {"anchor": r.anchor_id, "negatives": r.negative_ids,
         "p": r.probabilities, "cos": r.cosines} for r in mined))
    _write_json(run_dir / "stats.json",
                {**vars(stats), "embedding_source": source.describe()})
    manifest.add_output("negatives.jsonl")
    manifest.add_output("stats.json")
    manifest.write()
    print(f"mined negatives for {len(mined)}/{stats.anchors_total} anchors -> {run_dir}")


def cmd_gen_pos(args):
    run_dir = fresh_run_dir(args.out)
    manifest = _manifest(args, run_dir, {"corpus": args.corpus})
    corpus = _load_corpus(args.corpus)
    cfg = PositiveGenConfig(
        candidates_per_anchor=args.candidates_per_anchor,
        inject_count_range=_parse_count_range(args.inject_counts, "--inject-counts"),
        mask_count_range=_parse_count_range(args.mask_counts, "--mask-counts"),
        highfreq_vocab_size=args.highfreq_vocab_size,
        mask_token=args.mask_token,
        seed=args.seed,
    )
    try:
        cfg.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    from .positive_miner import PositiveStats
    stats = PositiveStats()
    cands = generate_all_candidates(corpus, cfg, workers=args.workers, stats=stats)
    _write_jsonl(run_dir / "candidates.jsonl", (
        {"anchor_id": aid, "candidate": text}
        for aid in sorted(cands) for text in cands[aid]))
    _write_json(run_dir / "stats.json", vars(stats))
    manifest.add_output("candidates.jsonl")
    manifest.add_output("stats.json")
    manifest.write()
    total = sum(len(v) for v in cands.values())
    print(f"generated {total} candidates for {len(cands)} anchors -> {run_dir}")


def cmd_mine_pos(args):
    if not args.candidates:
        raise UsageError("mine-pos needs at least one --candidates file")
    run_dir = fresh_run_dir(args.out)
    inputs = {"corpus": args.corpus}
    for i, path in enumerate(args.candidates):
        inputs[f"candidates[{i}]"] = path
    if args.embeddings:
        inputs["embeddings"] = args.embeddings
    if args.candidate_embeddings:
        inputs["candidate_embeddings"] = args.candidate_embeddings
    manifest = _manifest(args, run_dir, inputs)
    corpus = _load_corpus(args.corpus)

    maps = []
    skipped_records = 0
    for path in args.candidates:
        cand_map, skipped = load_external_candidates(path, len(corpus))
        maps.append(cand_map)
        skipped_records += skipped
    merged = merge_candidates(*maps)

    if args.candidate_embeddings:
        if len(args.candidates) != 1:
            raise UsageError("--candidate-embeddings requires exactly one candidate file")
        if skipped_records:
            raise DataError("candidate file has malformed records; row alignment "
                            "with --candidate-embeddings would be ambiguous")
        if not args.embeddings:
            raise UsageError("--candidate-embeddings also needs --embeddings for anchors")
        cand_matrix = read_embeddings(args.candidate_embeddings)
        records = _read_jsonl(args.candidates[0])
        if len(records) != cand_matrix.count:
            raise DataError(
                f"candidate embeddings hold {cand_matrix.count} rows for "
                f"{len(records)} records")
        row_of = {}
        for row, rec in enumerate(records):
            row_of.setdefault((rec["anchor_id"], rec["candidate"]), row)
        source = _corpus_source(args, corpus)

        def anchor_vec(aid):
            return source.vector_for_id(aid)

        def cand_vec(aid, text):
            key = (aid, text)
            if key not in row_of:
                raise DataError(f"candidate missing from embedding file: {key!r}")
            return cand_matrix.row(row_of[key]).astype(np.float64)
    else:
        source = _corpus_source(args, corpus)

        def anchor_vec(aid):
            return source.vector_for_id(aid)

        def cand_vec(aid, text):
            tokens = tokenize(text)
            if not tokens:
                raise DataError(f"candidate tokenizes to nothing: {text!r}")
            return source.vector_for_tokens(tokens)

    cfg = PositiveSampleConfig(
        lambda_p=args.lambda_p, m=args.m, seed=args.seed,
        length_normalized_surface=args.surface_length_norm,
        char_level_edit=args.edit_level == "char",
    )
    try:
        cfg.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    mined, stats = mine_all_positives(corpus, merged, anchor_vec, cand_vec, cfg,
                                      workers=args.workers)
    _write_jsonl(run_dir / "positives.jsonl", (
        {"anchor": r.anchor_id, "positives": r.positives, "p": r.probabilities}
        for r in mined))
    _write_json(run_dir / "stats.json", {
        **vars(stats), "skipped_candidate_records": skipped_records,
        "embedding_source": source.describe(),
    })
    manifest.add_output("positives.jsonl")
    manifest.add_output("stats.json")
    manifest.write()
    print(f"mined positives for {len(mined)} anchors -> {run_dir}")


def _positives_map(path):
    return {rec["anchor"]: rec["positives"] for rec in _read_jsonl(path)}


def _negatives_map(path):
    return {rec["anchor"]: rec["negatives"] for rec in _read_jsonl(path)}


def cmd_train(args):
    run_dir = fresh_run_dir(args.out)
    inputs = {"corpus": args.corpus, "positives": args.positives,
              "negatives": args.negatives}
    if args.dev_sts:
        inputs["dev_sts"] = args.dev_sts
    manifest = _manifest(args, run_dir, inputs)
    corpus = _load_corpus(args.corpus)
    pos_map = _positives_map(args.positives)
    neg_map = _negatives_map(args.negatives)
    cfg = TrainConfig(
        tau=args.tau, batch_size=args.batch, m=args.m, lr=args.lr,
        epochs=args.epochs, seed=args.seed, dim=args.dim,
        include_positive_in_denominator=args.include_positive_in_denominator,
        stop_gradient_on_z=args.stop_gradient_on_z,
        eval_every=args.eval_every, max_steps=args.max_steps,
    )
    try:
        cfg.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from exc

    dev_eval = None
    if args.dev_sts:
        dev_data = analysis.load_sts(args.dev_sts)

        def dev_eval(params):
            return analysis.eval_sts(
                dev_data, lambda text: encode(params, tokenize(text)))

    result = train(corpus, pos_map, neg_map, cfg, dev_eval=dev_eval)
    save_checkpoint(result.params, run_dir / "checkpoint")
    (run_dir / "loss_curve.tsv").write_text(
        "".join(f"{step}\t{loss!r}\n" for step, loss in result.loss_curve),
        encoding="utf-8")
    _write_json(run_dir / "result.json", {
        "steps": result.stats.steps,
        "examples": result.stats.examples,
        "anchors_skipped": result.stats.anchors_skipped,
        "positives_skipped": result.stats.positives_skipped,
        "first_loss": result.loss_curve[0][1] if result.loss_curve else None,
        "last_loss": result.loss_curve[-1][1] if result.loss_curve else None,
        "dev_curve": result.dev_curve,
    })
    figures.render_loss_curve(result.loss_curve, run_dir / "loss_curve.png",
                              dev_curve=result.dev_curve)
    for name in ("checkpoint/params.debc", "checkpoint/params.txt",
                 "checkpoint/params.json", "loss_curve.tsv", "result.json"):
        manifest.add_output(name)
    manifest.write()
    print(f"trained {result.stats.steps} steps -> {run_dir}")


def cmd_analyze_bias(args):
    run_dir = fresh_run_dir(args.out)
    manifest = _manifest(args, run_dir, {
        "corpus": args.corpus, "positives": args.positives,
        "negatives": args.negatives,
    })
    corpus = _load_corpus(args.corpus)
    if args.embeddings:
        raise UsageError("analyze-bias embeds candidate texts; use an encoder source")
    source = _corpus_source(args, corpus)

    def vec(text):
        tokens = tokenize(text)
        if not tokens:
            raise DataError(f"text tokenizes to nothing: {text!r}")
        return source.vector_for_tokens(tokens)

    pairs_pos = [(corpus[r["anchor"]].text, p)
                 for r in _read_jsonl(args.positives) for p in r["positives"]]
    pairs_neg = [(corpus[r["anchor"]].text, corpus[n].text)
                 for r in _read_jsonl(args.negatives) for n in r["negatives"]]
    report = analysis.bias_report(pairs_pos, pairs_neg, vec_fn=vec,
                                  multiplicity=args.multiplicity)
    _write_json(run_dir / "bias_report.json", report.as_dict())
    analysis.write_histogram_csv(run_dir / "hist_pos.csv", report.hist_pos,
                                 report.bin_edges)
    analysis.write_histogram_csv(run_dir / "hist_neg.csv", report.hist_neg,
                                 report.bin_edges)
    figures.render_bias_histograms(report, run_dir / "bias_hist.png")
    outputs = ["bias_report.json", "hist_pos.csv", "hist_neg.csv"]

    if args.baseline:
        base_pos = [(s.text, s.text) for s in corpus]
        base_neg = [(corpus[r.anchor_id].text, corpus[n].text)
                    for r in uniform_random_negatives(corpus, m=2, seed=args.seed)
                    for n in r.negative_ids]
        base = analysis.bias_report(base_pos, base_neg, vec_fn=vec,
                                    multiplicity=args.multiplicity)
        _write_json(run_dir / "baseline_report.json", base.as_dict())
        analysis.write_histogram_csv(run_dir / "baseline_hist_pos.csv",
                                     base.hist_pos, base.bin_edges)
        analysis.write_histogram_csv(run_dir / "baseline_hist_neg.csv",
                                     base.hist_neg, base.bin_edges)
        figures.render_bias_histograms(base, run_dir / "baseline_hist.png")
        outputs += ["baseline_report.json", "baseline_hist_pos.csv",
                    "baseline_hist_neg.csv"]

    for name in outputs:
        manifest.add_output(name)
    manifest.write()
    print(f"overlap pos {report.mean_overlap_pos:.4f}, "
          f"neg {report.mean_overlap_neg:.4f} -> {run_dir}")


def cmd_eval_sts(args):
    run_dir = fresh_run_dir(args.out)
    inputs = {"sts": args.sts}
    if args.corpus:
        inputs["corpus"] = args.corpus
    manifest = _manifest(args, run_dir, inputs)
    dataset = analysis.load_sts(args.sts)
    vec, label = _text_vec_fn(args)
    pred = [analysis.cosine(vec(a), vec(b)) for a, b, _ in dataset.pairs]
    gold = [g for _, _, g in dataset.pairs]
    rho = analysis.spearman(pred, gold)
    _write_json(run_dir / "result.json", {
        "spearman": rho, "pairs": len(dataset), "embedding_source": label,
    })
    figures.render_sts_scatter(pred, gold, rho, run_dir / "scatter.png")
    manifest.add_output("result.json")
    manifest.write()
    print(f"Spearman {rho:.4f} on {len(dataset)} pairs -> {run_dir}")


def cmd_align_uniform(args):
    run_dir = fresh_run_dir(args.out)
    inputs = {"sts": args.sts}
    if args.corpus:
        inputs["corpus"] = args.corpus
    manifest = _manifest(args, run_dir, inputs)
    dataset = analysis.load_sts(args.sts)
    vec, label = _text_vec_fn(args)
    metrics = analysis.sts_alignment_uniformity(dataset, vec,
                                                pos_threshold=args.pos_threshold)
    metrics["embedding_source"] = label
    _write_json(run_dir / "metrics.json", metrics)
    manifest.add_output("metrics.json")
    manifest.write()
    print(f"alignment {metrics['alignment']:.4f}, "
          f"uniformity {metrics['uniformity']:.4f} -> {run_dir}")


def cmd_sweep(args):
    run_dir = fresh_run_dir(args.out)
    manifest = _manifest(args, run_dir, {"corpus": args.corpus,
                                         "dev_sts": args.dev_sts})
    lambda_p_grid = _parse_grid(args.lambda_p_grid, "--lambda-p-grid")
    lambda_n_grid = _parse_grid(args.lambda_n_grid, "--lambda-n-grid")
    corpus = _load_corpus(args.corpus)
    dev_data = analysis.load_sts(args.dev_sts)

    init_params = EncoderParams.init(corpus.freq.keys(), dim=args.dim, seed=args.seed)
    source = EncoderSource(init_params, corpus)
    emb = source.corpus_matrix()
    gen_cfg = PositiveGenConfig(candidates_per_anchor=args.candidates_per_anchor,
                                seed=args.seed)
    cands = generate_all_candidates(corpus, gen_cfg, workers=args.workers)

    grid = np.full((len(lambda_n_grid), len(lambda_p_grid)), np.nan)
    cells = []
    for i, lambda_n in enumerate(lambda_n_grid):
        neg_cfg = NegativePoolConfig(
            band_lo=args.band_lo, band_hi=args.band_hi, pool_cap=args.pool_cap,
            lambda_n=lambda_n, m=args.m, seed=args.seed)
        mined_neg, _ = mine_all_negatives(corpus, emb, neg_cfg, workers=args.workers)
        neg_map = {r.anchor_id: r.negative_ids for r in mined_neg}
        for j, lambda_p in enumerate(lambda_p_grid):
            pos_cfg = PositiveSampleConfig(lambda_p=lambda_p, m=args.m, seed=args.seed)
            mined_pos, _ = mine_all_positives(
                corpus, cands,
                lambda aid: source.vector_for_id(aid),
                lambda aid, text: source.vector_for_tokens(tokenize(text)),
                pos_cfg, workers=args.workers)
            pos_map = {r.anchor_id: r.positives for r in mined_pos}
            cfg = TrainConfig(
                tau=args.tau, batch_size=args.batch, m=args.m, lr=args.lr,
                epochs=args.epochs, seed=args.seed, dim=args.dim,
                max_steps=args.steps,
                include_positive_in_denominator=args.include_positive_in_denominator)
            result = train(corpus, pos_map, neg_map, cfg)
            rho = analysis.eval_sts(
                dev_data,
                lambda text: encode(result.final_params, tokenize(text)))
            grid[i, j] = rho
            cells.append({"lambda_n": lambda_n, "lambda_p": lambda_p,
                          "dev_spearman": rho,
                          "steps": result.stats.steps})
            log.info("cell lambda_n=%s lambda_p=%s -> %.4f", lambda_n, lambda_p, rho)

    header = "lambda_n\\lambda_p\t" + "\t".join(str(v) for v in lambda_p_grid)
    rows = [header]
    for i, lambda_n in enumerate(lambda_n_grid):
        rows.append(str(lambda_n) + "\t"
                    + "\t".join(repr(float(v)) for v in grid[i]))
    (run_dir / "sweep.tsv").write_text("".join(r + "\n" for r in rows),
                                       encoding="utf-8")
    _write_json(run_dir / "sweep.json", {"cells": cells,
                                         "lambda_p_grid": lambda_p_grid,
                                         "lambda_n_grid": lambda_n_grid})
    figures.render_sweep_heatmap(grid, lambda_p_grid, lambda_n_grid,
                                 run_dir / "sweep.png")
    manifest.add_output("sweep.tsv")
    manifest.add_output("sweep.json")
    manifest.write()
    best = cells[int(np.nanargmax([c["dev_spearman"] for c in cells]))]
    print(f"{len(cells)} cells; best dev Spearman {best['dev_spearman']:.4f} at "
          f"lambda_p={best['lambda_p']}, lambda_n={best['lambda_n']} -> {run_dir}")


HANDLERS = {
    "ingest": cmd_ingest,
    "mine-neg": cmd_mine_neg,
    "gen-pos": cmd_gen_pos,
    "mine-pos": cmd_mine_pos,
    "train": cmd_train,
    "analyze-bias": cmd_analyze_bias,
    "eval-sts": cmd_eval_sts,
    "align-uniform": cmd_align_uniform,
    "sweep": cmd_sweep,
}


def _setup_logging():
    level = LOG_LEVELS.get(os.environ.get("DEBCSE_LOG", "warn").lower(),
                           logging.WARNING)
    logging.basicConfig(level=level,
                        format="%(levelname)s %(name)s: %(message)s")


def run(argv) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        try:
            args = parser.parse_args(argv)
        except SystemExit as exc:  # --help / --version
            return int(exc.code or 0)
        if not args.subcommand:
            parser.print_usage(sys.stderr)
            return 1
        args = _merge_config(argv, args)
        HANDLERS[args.subcommand](args)
        return 0
    except UsageError as exc:
        if exc.parser is not None:
            exc.parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DebcseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
