"""
Command line entry point.

    psirec prepare --input ratings.dat --schema movielens --min-rating 4 \\
        --min-user-items 1 --holdback 8mo --steps 8 --out split/
    psirec run --split split/ --models puresvd,psi --ranks 10,30,100 --top-n 10 --seed 0 --out runs/ml1m
    psirec report --runs runs/ml1m --format csv

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from psirec.data import dataset_stats, load_csv, parse_duration, parse_schema, preprocess, save_split, stepwise_split
from psirec.exceptions import DataError, NumericalError
from psirec.harness import ExperimentConfig, aggregate, read_reports, run_experiment, summary_text

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _duration(text: str) -> int:
    try:
        return parse_duration(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="psirec", description="PureSVD vs. PSI stability experiments")
    parser.add_argument("--log-level", default="WARNING", help="logging level (default: %(default)s)")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("prepare", help="preprocess a ratings file and write a stepwise split")
    p.add_argument("--input", required=True, help="delimited ratings file")
    p.add_argument("--schema", default="movielens",
                   help="preset (movielens, amazon, csv) or key=value list (default: %(default)s)")
    p.add_argument("--min-rating", type=float, default=4.0)
    p.add_argument("--min-user-items", type=int, default=1)
    p.add_argument("--holdback", type=_duration, default="8mo",
                   help="span held back for the steps, e.g. 240d or 8mo (month = 30 days)")
    p.add_argument("--steps", type=int, default=8)
    p.add_argument("--out", required=True, help="output directory for the split")

    r = sub.add_parser("run", help="run the step loop on a prepared split")
    r.add_argument("--split", required=True)
    r.add_argument("--models", default="puresvd,psi")
    r.add_argument("--ranks", type=_int_list, default=[10, 30, 100, 300])
    r.add_argument("--top-n", type=int, default=10)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--decomposition", choices=("qr", "svd"), default="qr",
                   help="orthogonalization used inside the PSI step")
    r.add_argument("--save-models", action="store_true", help="write final factor checkpoints")
    r.add_argument("--overwrite", action="store_true", help="replace an existing non-empty output directory")
    r.add_argument("--out", required=True)

    q = sub.add_parser("report", help="summarize a finished run")
    q.add_argument("--runs", required=True, help="run output directory")
    q.add_argument("--format", choices=("csv", "json"), default="csv")
    return parser


def _prepare(args) -> None:
    if args.steps < 1 or args.min_user_items < 0 or args.min_rating < 0:
        raise UsageError("--steps must be >= 1 and thresholds non-negative")
    try:
        schema = parse_schema(args.schema)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    raw = load_csv(args.input, schema)
    clean = preprocess(raw, args.min_rating, args.min_user_items)
    split = stepwise_split(clean, args.holdback, args.steps)
    n_users, n_items, density = dataset_stats(clean)
    config = {
        "input": str(args.input),
        "schema": args.schema,
        "min_rating": args.min_rating,
        "min_user_items": args.min_user_items,
        "holdback": args.holdback,
        "steps": args.steps,
        "n_skipped_rows": raw.n_skipped,
        "n_records": len(clean),
    }
    save_split(split, args.out, config)
    M, N = split.shape
    print(f"preprocessed: {n_users} users, {n_items} items, density {100 * density:.2f}%")
    print(f"split: {M}x{N} initial matrix with {split.initial_training.nnz} interactions, "
          f"{len(split.steps)} steps; wrote {args.out}")


def _run(args) -> None:
    try:
        config = ExperimentConfig(
            split_dir=args.split,
            models=[m.strip() for m in args.models.split(",") if m.strip()],
            ranks=args.ranks,
            n=args.top_n,
            seed=args.seed,
            output_dir=args.out,
            psi_decomposition=args.decomposition,
            save_models=args.save_models,
            overwrite=args.overwrite,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    try:
        reports = run_experiment(config)
    except FileExistsError as exc:
        raise UsageError(str(exc)) from None
    sys.stdout.write(summary_text(aggregate(reports), "csv"))


def _report(args) -> None:
    try:
        reports = read_reports(args.runs)
    except FileNotFoundError as exc:
        raise DataError(f"no reports found: {exc}") from None
    if not reports:
        raise DataError(f"{args.runs}: reports.csv has no rows")
    sys.stdout.write(summary_text(aggregate(reports), args.format))


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    handlers = {"prepare": _prepare, "run": _run, "report": _report}
    try:
        handlers[args.command](args)
    except UsageError as exc:
        print(f"psirec: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as exc:
        print(f"psirec: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, np.linalg.LinAlgError) as exc:
        print(f"psirec: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"psirec: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
