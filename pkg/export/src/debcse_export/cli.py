"""CLI for the exporters: embedding files and back-translation candidates."""

from __future__ import annotations

import argparse
import logging
import os
import sys

from .debc import ExportError
from .export import ExportConfig, backtranslate_candidates, export_embeddings


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="debcse-export", description=__doc__)
    sub = parser.add_subparsers(dest="subcommand", metavar="SUBCOMMAND")

    p = sub.add_parser("export-embeddings",
                       help="embed a sentence file into the DEBC format")
    p.add_argument("--input", required=True, help="one sentence per line, UTF-8")
    p.add_argument("--output", required=True, help="DEBC file path (.debc)")
    p.add_argument("--model", default="hash:64",
                   help="'hash:<dim>' or a sentence-transformers model name")
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--device", default="cpu")
    p.add_argument("--pooling", choices=["mean", "cls"], default="mean")

    p = sub.add_parser("backtranslate",
                       help="generate positive candidates via round-trip translation")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True, help="candidate records path (.jsonl)")
    p.add_argument("--translator", choices=["identity", "opus"], default="identity")
    p.add_argument("--pivot", default="zh")
    p.add_argument("--candidates-per-anchor", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--highfreq-vocab-size", type=int, default=100)
    p.add_argument("--mask-token", default="[MASK]")
    p.add_argument("--device", default="cpu")

    return parser


def run(argv) -> int:
    logging.basicConfig(
        level=logging.INFO if os.environ.get("DEBCSE_LOG", "").lower()
        in ("info", "debug") else logging.WARNING)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code else 0
    if not args.subcommand:
        parser.print_usage(sys.stderr)
        return 1
    try:
        if args.subcommand == "export-embeddings":
            cfg = ExportConfig(model=args.model, batch_size=args.batch,
                               device=args.device, pooling=args.pooling)
            count = export_embeddings(args.input, args.output, cfg)
            print(f"exported {count} rows -> {args.output}")
        else:
            written, failures = backtranslate_candidates(
                args.input, args.output,
                translator_name=args.translator, pivot=args.pivot,
                candidates_per_anchor=args.candidates_per_anchor,
                seed=args.seed, highfreq_vocab_size=args.highfreq_vocab_size,
                mask_token=args.mask_token, device=args.device)
            print(f"wrote {written} candidate records "
                  f"({failures} failures) -> {args.output}")
        return 0
    except ExportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
