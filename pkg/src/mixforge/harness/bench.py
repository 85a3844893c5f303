"""Benchmark suites: a grid of run configs trained sequentially.

A suite file uses the run-config syntax for shared base keys, plus

    sweep.<key> = v1, v2, ...     # cartesian product over all sweep keys
    run = key=value, key=value    # one explicit row (repeatable)

Every run line is expanded by the sweep product; with only sweeps, the
product alone defines the rows.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Optional

from ..data import DataError
from ..mixer import ConfigError, param_count
from .config import RunConfig, apply_overrides, coerce, parse_pairs
from .runner import time_epochs, train_run, write_metrics_csv

logger = logging.getLogger(__name__)

CSV_FIELDS = ["config", "dataset", "variant", "n", "m_pred", "s", "r", "shared_temporal",
              "mse", "mae", "val_mse", "params", "best_epoch", "train_seconds_mean",
              "train_seconds_std", "infer_seconds_mean", "infer_seconds_std"]


def _split_assignments(text: str, where: str) -> dict[str, str]:
    out = {}
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "=" not in part:
            raise ConfigError(f"{where}: expected key=value in run line, got {part!r}")
        key, value = (p.strip() for p in part.split("=", 1))
        coerce(key, value)
        out[key] = value
    return out


def parse_suite(text: str, source: str = "<suite>",
                base_dir: Optional[Path] = None) -> list[RunConfig]:
    base: dict[str, str] = {}
    sweeps: dict[str, list[str]] = {}
    runs: list[dict[str, str]] = []
    for line_no, key, value in parse_pairs(text, source, repeatable=("run",)):
        where = f"{source}:{line_no}"
        if key == "run":
            runs.append(_split_assignments(value, where))
        elif key.startswith("sweep."):
            name = key[len("sweep."):]
            options = [v.strip() for v in value.split(",") if v.strip()]
            for v in options:
                coerce(name, v)
            if not options:
                raise ConfigError(f"{where}: sweep over {name!r} has no values")
            sweeps[name] = options
        else:
            coerce(key, value)
            base[key] = value
    if not runs and not sweeps:
        raise ConfigError(f"{source}: no runs specified")
    grid = [dict(zip(sweeps, combo)) for combo in itertools.product(*sweeps.values())]
    configs = []
    for run in runs or [{}]:
        for point in grid:
            cfg = apply_overrides(RunConfig(), {**base, **run, **point})
            if cfg.data and base_dir is not None and not Path(cfg.data).is_absolute():
                cfg = replace(cfg, data=str((base_dir / cfg.data).resolve()))
            configs.append(cfg)
    return configs


def load_suite(path, seed: Optional[int] = None) -> list[RunConfig]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read suite {path}: {exc.strerror}") from None
    configs = parse_suite(text, str(path), path.parent)
    if seed is not None:
        configs = [replace(c, seed=seed) for c in configs]
    return [c.validate() for c in configs]


def config_from_inline(inline: str) -> RunConfig:
    """Rebuild a RunConfig from a bench CSV ``config`` cell."""
    pairs = dict(p.split("=", 1) for p in inline.split(";") if p)
    return apply_overrides(RunConfig(), pairs)


@dataclass
class BenchOutcome:
    rows: list[dict]
    skipped: list[tuple[str, str]]  # (dataset, reason)


def run_suite(configs: list[RunConfig], log: Callable[[str], None] = print) -> BenchOutcome:
    rows, skipped = [], []
    for i, cfg in enumerate(configs, start=1):
        if cfg.data and not Path(cfg.data).is_file():
            reason = f"dataset file not found: {cfg.data}"
            logger.warning("skipping run %d: %s", i, reason)
            log(f"warning: skipping run {i}: {reason}")
            skipped.append((cfg.dataset_name, reason))
            continue
        log(f"bench run {i}/{len(configs)}")
        try:
            result = train_run(cfg, log=log)
        except (ConfigError, DataError, FloatingPointError) as exc:
            log(f"warning: run {i} failed: {exc}")
            skipped.append((cfg.dataset_name, str(exc)))
            continue
        timing = time_epochs(result, result.cfg.timing_runs)
        r = result.cfg
        rows.append({
            "config": r.to_inline(), "dataset": r.dataset_name, "variant": r.variant,
            "n": r.n, "m_pred": r.m_pred, "s": r.s, "r": r.r,
            "shared_temporal": "true" if r.shared_temporal else "false",
            "mse": repr(result.report.test_mse), "mae": repr(result.report.test_mae),
            "val_mse": repr(result.report.best_val_loss),
            "params": param_count(result.model)[0], "best_epoch": result.report.best_epoch,
            "train_seconds_mean": f"{timing['train_seconds']:.4f}",
            "train_seconds_std": f"{timing['train_seconds_std']:.4f}",
            "infer_seconds_mean": f"{timing['infer_seconds']:.4f}",
            "infer_seconds_std": f"{timing['infer_seconds_std']:.4f}",
        })
    return BenchOutcome(rows, skipped)


TABLE_COLUMNS = [("dataset", "dataset"), ("variant", "variant"), ("n", "n"), ("m", "m_pred"),
                 ("s", "s"), ("r", "r"), ("shared", "shared_temporal"), ("params", "params")]


def format_table(rows: list[dict]) -> str:
    """Aligned text table; timing cells read ``mean ± std`` seconds per epoch."""
    header = [h for h, _ in TABLE_COLUMNS] + ["MSE", "MAE", "train s/epoch", "infer s"]
    body = []
    for row in rows:
        cells = [str(row[k]) for _, k in TABLE_COLUMNS]
        cells += [f"{float(row['mse']):.4f}", f"{float(row['mae']):.4f}",
                  f"{float(row['train_seconds_mean']):.3f} ± {float(row['train_seconds_std']):.3f}",
                  f"{float(row['infer_seconds_mean']):.3f} ± {float(row['infer_seconds_std']):.3f}"]
        body.append(cells)
    widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]
    lines = ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in [header] + body]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def write_bench_csv(path, rows: list[dict]) -> None:
    write_metrics_csv(path, rows, CSV_FIELDS)
