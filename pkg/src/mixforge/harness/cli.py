"""``mixforge`` command line."""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from ..data import DataError
from ..mixer import ConfigError
from . import bench, gradcheck, runner
from .checkpoint import CheckpointError
from .config import SEED_ENV, load_config

EXPECTED_ERRORS = (ConfigError, DataError, CheckpointError, OSError, KeyError,
                   FloatingPointError)


class RunLog:
    """Writes key=value lines to stdout and, once opened, to a log file."""

    def __init__(self):
        self.fh = None

    def open(self, path: Path):
        self.fh = path.open("w", encoding="utf-8")

    def __call__(self, line: str) -> None:
        print(line, flush=True)
        if self.fh:
            self.fh.write(line + "\n")
            self.fh.flush()

    def close(self):
        if self.fh:
            self.fh.close()


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.output_dir:
        cfg.output_dir = args.output_dir
    out_dir = Path(cfg.output_dir)
    if not out_dir.is_absolute():
        out_dir = Path(args.config).parent / out_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    log = RunLog()
    log.open(out_dir / "run.log")
    try:
        result = runner.train_run(cfg, log=log)
        paths = runner.save_run(result, out_dir)
        log(runner.format_record(result.metrics()))
        log(f"checkpoint={paths['checkpoint']} metrics={paths['metrics']}")
    finally:
        log.close()
    return 0


def cmd_eval(args) -> int:
    record = runner.eval_run(args.checkpoint, args.data)
    print(runner.format_record(record))
    if args.out:
        runner.write_metrics_csv(args.out, [record], runner.METRIC_FIELDS)
    return 0


def cmd_gradcheck(args) -> int:
    return gradcheck.main()


def cmd_bench(args) -> int:
    seed = os.environ.get(SEED_ENV)
    configs = bench.load_suite(args.suite, seed=int(seed) if seed else None)
    outcome = bench.run_suite(configs)
    if not outcome.rows:
        print(f"error: all {len(configs)} runs failed or were skipped", file=sys.stderr)
        return 1
    table = bench.format_table(outcome.rows)
    print(table)
    out_dir = Path(args.out or configs[0].output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    bench.write_bench_csv(out_dir / "bench.csv", outcome.rows)
    (out_dir / "bench.txt").write_text(table + "\n", encoding="utf-8")
    print(f"csv={out_dir / 'bench.csv'} table={out_dir / 'bench.txt'}")
    return 0


def cmd_export(args) -> int:
    out = args.out or str(Path(args.checkpoint).with_suffix("")) + "_weights"
    for path in runner.export_weights(args.checkpoint, args.glob, out):
        print(f"wrote={path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mixforge", description="factorized mixer forecasting engine")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one configuration")
    p.add_argument("--config", required=True)
    p.add_argument("--output-dir", help="override the config's output_dir")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="test-split metrics of a checkpoint on a CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", help="also write the record as CSV")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of every op")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("bench", help="run a benchmark suite")
    p.add_argument("--suite", required=True)
    p.add_argument("--out", help="directory for bench.csv and bench.txt")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("export-weights", help="write parameters as CSV matrices")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--glob", required=True)
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_export)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except EXPECTED_ERRORS as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
