# bitforest/cli.py
import argparse
import logging
import sys
import time
from typing import List, Optional

import pandas as pd

from .articulated import Token
from .config import EngineSettings, load_settings
from .dataset import PlantedKeyword, generate_dataset
from .engine import BpiEngine
from .errors import BitforestError, IngestionError, ParameterError, PersistenceError
from .hsb import SpBehavior, build_network
from .records import TEXT_DIMENSIONS, read_records
from .verify import B2, B3, RAW_HASH

EXIT_OK, EXIT_USER, EXIT_PERSISTENCE = 0, 1, 2

DEMO_ADDRESS = "0x" + "ab" * 20
SETTING_FLAGS = ("branching", "height", "create_batch_threshold", "alpha", "beta", "gamma", "seed")


def _overrides(args: argparse.Namespace) -> dict:
    return {name: getattr(args, name, None) for name in SETTING_FLAGS}


def _open(args: argparse.Namespace) -> BpiEngine:
    return BpiEngine.open(args.data_dir, **_overrides(args))


def parse_keyword(dimension: str, text: str):
    if dimension in TEXT_DIMENSIONS:
        return text
    try:
        return int(text)
    except ValueError:
        raise ParameterError(f"{dimension} keywords are integers, got {text!r}") from None


def _split(text: Optional[str]) -> List[str]:
    return [part for part in (text or "").split(",") if part.strip()]


def cmd_ingest(args: argparse.Namespace) -> int:
    fmt = args.format or ("csv" if args.input.endswith(".csv") else "jsonl")
    started = time.perf_counter()
    with _open(args) as engine:
        before = engine.record_count
        try:
            engine.ingest(read_records(args.input, fmt))
        except IngestionError:
            # keep every record before the bad line
            engine.persist()
            print(f"ingested {engine.record_count - before} before the error", file=sys.stderr)
            raise
        engine.persist()
        count = engine.record_count - before
    print(f"ingested {count} ({time.perf_counter() - started:.2f} s)")
    return EXIT_OK


def cmd_feature_add(args: argparse.Namespace) -> int:
    keyword = parse_keyword(args.dimension, args.keyword) if args.keyword is not None else None
    with _open(args) as engine:
        spec = engine.add_feature(args.name, args.dimension, keyword, args.min, args.max)
        engine.persist()
    print(f"feature {spec.feature_id}: {spec.name}")
    return EXIT_OK


def cmd_query(args: argparse.Namespace) -> int:
    with _open(args) as engine:
        ids = engine.resolve(_split(args.features))
        exclude = engine.resolve(_split(args.exclude))
        token = Token.from_hex(args.token) if args.token else None
        result = engine.query(ids, token=token, exclude=exclude, with_payloads=args.records)
    print(f"matches: {len(result.indices)}")
    if result.indices:
        print("indices: " + " ".join(str(i) for i in result.indices))
    for record in result.payloads:
        print(record.to_json())
    if args.emit_token:
        print(f"token: {result.token.to_hex()}")
    return EXIT_OK


def _demo_records(args: argparse.Namespace, settings: EngineSettings):
    if args.data_dir or settings.data_dir:
        with _open(args) as engine:
            if engine.record_count:
                return list(engine.payloads)
    planted = [PlantedKeyword("from", DEMO_ADDRESS, 0.01)]
    return generate_dataset(args.records, seed=settings.seed, planted=planted)


def cmd_verify_demo(args: argparse.Namespace) -> int:
    settings = load_settings(args.data_dir, **_overrides(args))
    records = _demo_records(args, settings)
    network = build_network(settings, seed=settings.seed)
    network.owner.outsource_all(records)
    names = _split(args.features) or [f"from={DEMO_ADDRESS}"]
    ids = network.sp.engine.resolve(names)
    behavior = SpBehavior.from_name(args.behavior, args.count)
    outcome = network.user.round_trip(ids, behavior)
    verdict = outcome.verdict
    k = "raw" if outcome.k is None else outcome.k
    print(f"k: {k}")
    print(f"VO size: {outcome.vo_bytes} bytes")
    print(f"N_h: {verdict.n_h}  N_R: {verdict.n_r}  N_acc: {verdict.n_acc}")
    if verdict.kind == B3:
        print("verdict: B3 rejected all")
    elif verdict.kind == B2:
        extra = outcome.vo_round_trips - 1
        print(f"verdict: B2 {len(verdict.unmatched_checksums)} withheld, "
              f"recovered {len(outcome.recovered)} via local reverify ({extra} extra chain calls)")
    else:
        print(f"verdict: {verdict.kind}")
        if verdict.fabricated:
            print(f"rejected {len(verdict.fabricated)} fabricated records")
    if outcome.k is None and verdict.unmatched_checksums:
        print(f"{RAW_HASH} VO: {len(verdict.unmatched_checksums)} digests unmatched")
    return EXIT_OK


def cmd_bench(args: argparse.Namespace) -> int:
    from evaluation.evaluation_runner import run_benchmark

    settings = load_settings(None, **_overrides(args))
    sizes = [int(float(s)) for s in _split(args.sizes)]
    run_benchmark(sizes, args.out, settings, delta=args.delta, batch=args.batch)
    return EXIT_OK


def cmd_stats(args: argparse.Namespace) -> int:
    with _open(args) as engine:
        report = engine.stats()
    print(pd.Series(report, dtype=object).to_string())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bitforest", description="Append-only bitmap keyword index")
    ap.add_argument("--data-dir", default=None, help="data directory (default: $BITFOREST_DATA_DIR)")
    ap.add_argument("--branching", type=int, default=None)
    ap.add_argument("--height", type=int, default=None)
    ap.add_argument("--create-batch-threshold", type=int, default=None)
    ap.add_argument("--alpha", type=float, default=None)
    ap.add_argument("--beta", type=float, default=None)
    ap.add_argument("--gamma", type=float, default=None)
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)

    i = sub.add_parser("ingest", help="append records from a file")
    i.add_argument("--input", required=True)
    i.add_argument("--format", choices=("jsonl", "csv"), default=None)
    i.set_defaults(func=cmd_ingest)

    f = sub.add_parser("feature-add", help="register a keyword or range feature")
    f.add_argument("--name", default=None)
    f.add_argument("--dimension", required=True)
    f.add_argument("--keyword", default=None)
    f.add_argument("--min", type=int, default=None)
    f.add_argument("--max", type=int, default=None)
    f.set_defaults(func=cmd_feature_add)

    q = sub.add_parser("query", help="conjunctive query, optionally resumed from a token")
    q.add_argument("--features", required=True, help="comma-separated feature names or ids")
    q.add_argument("--exclude", default=None, help="features whose matches are removed")
    q.add_argument("--token", default=None, help="16 hex digit token of an earlier query")
    q.add_argument("--emit-token", action="store_true")
    q.add_argument("--records", action="store_true", help="print matching records as JSON")
    q.set_defaults(func=cmd_query)

    v = sub.add_parser("verify-demo", help="run one verified round trip against a simulated SP")
    v.add_argument("--behavior", default="honest", choices=("honest", "b1", "b2", "b3"))
    v.add_argument("--features", default=None)
    v.add_argument("--count", type=int, default=2, help="records fabricated (b1) or withheld (b2)")
    v.add_argument("--records", type=int, default=2000, help="synthetic ledger size without a data dir")
    v.set_defaults(func=cmd_verify_demo)

    b = sub.add_parser("bench", help="scaled-down benchmark, one CSV row per size")
    b.add_argument("--sizes", default="1e4,3e4,1e5")
    b.add_argument("--out", default="bench.csv")
    b.add_argument("--delta", type=int, default=1000, help="records appended before the resumed query")
    b.add_argument("--batch", type=int, default=10000, help="records per timed insert batch")
    b.set_defaults(func=cmd_bench)

    s = sub.add_parser("stats", help="engine and file statistics")
    s.set_defaults(func=cmd_stats)
    return ap


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    try:
        return args.func(args)
    except PersistenceError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_PERSISTENCE
    except (BitforestError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USER
