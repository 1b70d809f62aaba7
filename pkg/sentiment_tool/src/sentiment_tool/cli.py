"""Command-line entry point for the sentiment extraction tool.

`sentiscore score` runs the pretrained model over timestamped text and
emits the daily date,news,media CSV the forecasting pipeline ingests.
`sentiscore passthrough` rescales a 0-100 indicator CSV instead.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from . import aggregate, records, scoring


def cmd_score(args) -> int:
    recs = records.read_records(args.input, args.format)
    if not recs:
        print("no records in input", file=sys.stderr)
        return 1
    scorer = scoring.make_scorer(args.model, cache_dir=args.cache_dir, max_length=args.max_length)
    scores = scoring.score_batch(recs, scorer, batch_size=args.batch_size)
    rows = aggregate.aggregate_daily(recs, scores)
    aggregate.write_sentiment_csv(args.out, rows)
    print(f"scored {len(recs)} records over {len(rows)} days -> {args.out}")
    return 0


def cmd_passthrough(args) -> int:
    rows = aggregate.indicator_passthrough(args.indicator_csv)
    aggregate.write_sentiment_csv(args.out, rows)
    print(f"rescaled {len(rows)} indicator days -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sentiscore", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("score", help="score raw text and aggregate daily means")
    p.add_argument("--input", required=True, help="JSON-lines or CSV of timestamp,source,text")
    p.add_argument("--format", choices=("jsonl", "csv"), default=None)
    p.add_argument("--out", required=True)
    p.add_argument(
        "--model",
        default=os.environ.get("SENTISCORE_MODEL", scoring.DEFAULT_MODEL),
        help="model name, or 'lexicon' for the offline keyword fallback",
    )
    p.add_argument("--cache-dir", default=os.environ.get("SENTISCORE_CACHE"))
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--max-length", type=int, default=128)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("passthrough", help="rescale a date,indicator CSV (0-100) to news scores")
    p.add_argument("--indicator-csv", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_passthrough)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, stream=sys.stderr, format="%(levelname)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (records.RecordError, ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
