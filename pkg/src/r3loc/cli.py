"""``r3loc`` command-line tool.

Exit codes: 0 success / accepted, 1 re-localisation rejected, 2 error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path
from typing import Sequence

from . import pipeline
from .config import PipelineConfig
from .errors import EmptyDatabase, R3LocError
from .verification import svc_train

EXIT_OK, EXIT_REJECTED, EXIT_ERROR = 0, 1, 2

log = logging.getLogger("r3loc")


def _emit(d: dict, as_json: bool) -> None:
    if as_json:
        print(json.dumps(d, indent=2, sort_keys=False, default=str))
        return
    for k, v in d.items():
        if isinstance(v, bool):
            v = str(v).lower()
        elif isinstance(v, float):
            v = repr(v)
        print(f"{k}: {v}")


def cmd_build_db(args: argparse.Namespace, config: PipelineConfig) -> int:
    try:
        db, warnings = pipeline.build_database(args.input, args.db, config)
    except pipeline.BuildError as exc:
        for p in exc.problems:
            print(f"error: {p}", file=sys.stderr)
        return EXIT_ERROR
    for w in warnings:
        log.warning(w)
    _emit({"database": str(args.db), "records": len(db)}, args.json)
    return EXIT_OK


def cmd_relocalise(args: argparse.Namespace, config: PipelineConfig) -> int:
    try:
        report = pipeline.load_and_relocalise(
            args.db, args.cloud, args.image, args.calib, args.svc, config, args.seed, args.query_id, args.query_node
        )
    except EmptyDatabase as exc:
        print(f"error: {exc} ({args.db})", file=sys.stderr)
        return EXIT_ERROR
    if args.json:
        print(json.dumps(report.to_dict(), indent=2))
    else:
        print("\n".join(report.lines()))
    return EXIT_OK if report.accepted else EXIT_REJECTED


def cmd_train_svc(args: argparse.Namespace, config: PipelineConfig) -> int:
    samples = pipeline.read_training_table(args.features)
    v = config.verification
    model = svc_train(samples, C=v.svc_c, gamma=v.svc_gamma, coef0=v.svc_coef0)
    model.save(args.out)
    counts = {c: sum(1 for s in samples if s[2] == c) for c in model.classes}
    out = {"model": str(args.out), "samples": len(samples)}
    out.update({f"samples_{c}": n for c, n in counts.items()})
    out["training_accuracy"] = model.training_accuracy
    _emit(out, args.json)
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace, config: PipelineConfig) -> int:
    queries = pipeline.read_queries(args.queries)
    ev = pipeline.evaluate(args.db, queries, args.calib, args.svc, config, args.seed)
    if args.csv_dir:
        ev.write_csv(args.csv_dir)
    d = ev.to_dict()
    if args.json:
        print(json.dumps({k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in d.items()}, indent=2))
    else:
        _emit(d, False)
        print(ev.table_text())
    return EXIT_OK


def cmd_synth(args: argparse.Namespace, config: PipelineConfig) -> int:
    from .synthetic import write_scenario

    write_scenario(
        args.out, n_map=args.places, n_revisit=args.revisits, n_corrupt=args.corrupted,
        n_unrelated=args.unrelated, seed=args.seed,
    )
    _emit({"scenario": str(args.out)}, args.json)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="key = value configuration file")
    common.add_argument("--seed", type=int, default=42, help="seed for all randomness (default 42)")
    common.add_argument("--json", action="store_true", help="emit a JSON body instead of key: value lines")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="r3loc", description="Lidar-camera re-localisation in a prior map.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-db", parents=[common], help="describe prior-map submaps into a database")
    p.add_argument("--input", type=Path, required=True, help="directory with poses.txt and cloud files")
    p.add_argument("--db", type=Path, required=True)
    p.set_defaults(func=cmd_build_db)

    p = sub.add_parser("relocalise", parents=[common], help="re-localise one query against the database")
    p.add_argument("--db", type=Path, required=True)
    p.add_argument("--cloud", type=Path, required=True)
    p.add_argument("--image", type=Path, required=True)
    p.add_argument("--calib", type=Path, required=True)
    p.add_argument("--svc", type=Path, required=True)
    p.add_argument("--query-id", default=None, help="label echoed in the report (default: cloud file stem)")
    p.add_argument("--query-node", type=int, default=0, help="revisit-session node id used in the emitted edge")
    p.set_defaults(func=cmd_relocalise)

    p = sub.add_parser("train-svc", parents=[common], help="train the verification classifier")
    p.add_argument("--features", type=Path, required=True, help="CSV with columns mcs,nu,label")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_train_svc)

    p = sub.add_parser("evaluate", parents=[common], help="run a query set with ground truth and report metrics")
    p.add_argument("--db", type=Path, required=True)
    p.add_argument("--queries", type=Path, required=True)
    p.add_argument("--calib", type=Path, required=True)
    p.add_argument("--svc", type=Path, required=True)
    p.add_argument("--csv-dir", type=Path, help="write recall / verification / runtime CSV files here")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic wake-up scenario")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--places", type=int, default=20)
    p.add_argument("--revisits", type=int, default=14)
    p.add_argument("--corrupted", type=int, default=3)
    p.add_argument("--unrelated", type=int, default=3)
    p.set_defaults(func=cmd_synth)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        config = PipelineConfig.load(args.config)
        return args.func(args, config)
    except (R3LocError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
