"""Pipelines behind the CLI commands: train, eval and weight export."""

from __future__ import annotations

import csv
import fnmatch
import io
import statistics
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from ..data import Datasets, DataError
from ..mixer import ConfigError, MixerModel, param_count
from ..train import AdamState, TrainReport, evaluate, run_epoch, train
from . import checkpoint as ckpt_io
from .config import RunConfig, build_datasets, load_series, parse_config

METRIC_FIELDS = ["dataset", "variant", "n", "m_pred", "s", "r", "mse", "mae", "seconds"]


@dataclass
class RunResult:
    cfg: RunConfig
    model: MixerModel
    report: TrainReport
    data: Datasets
    opt: AdamState

    def metrics(self) -> dict:
        return metrics_record(self.cfg, self.report.test_mse, self.report.test_mae,
                              self.report.seconds)


def metrics_record(cfg: RunConfig, mse: float, mae: float, seconds: float) -> dict:
    return {"dataset": cfg.dataset_name, "variant": cfg.variant, "n": cfg.n,
            "m_pred": cfg.m_pred, "s": cfg.s, "r": cfg.r, "mse": repr(float(mse)),
            "mae": repr(float(mae)), "seconds": f"{seconds:.3f}"}


def format_record(record: dict) -> str:
    return " ".join(f"{k}={v}" for k, v in record.items())


def write_metrics_csv(path, records: list[dict], fieldnames: Optional[list[str]] = None) -> None:
    fieldnames = fieldnames or list(records[0])
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        writer.writerows(records)


def read_metrics_csv(path) -> list[dict]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def train_run(cfg: RunConfig, log: Callable[[str], None] = print) -> RunResult:
    cfg = cfg.resolved()
    raw = load_series(cfg)
    if cfg.c and cfg.c != raw.c:
        raise ConfigError(f"config sets c={cfg.c} but the data has {raw.c} channels")
    data = build_datasets(cfg, raw)
    model = MixerModel(cfg.mixer_config(raw.c), seed=cfg.seed)
    tcfg = cfg.train_config()
    opt = AdamState(tcfg.lr)
    total, _ = param_count(model)
    log(f"run dataset={cfg.dataset_name} variant={cfg.variant} n={cfg.n} m_pred={cfg.m_pred} "
        f"s={cfg.s} r={cfg.r} c={raw.c} params={total} lr={tcfg.lr!r} "
        f"batch_size={tcfg.batch_size} seed={cfg.seed} train_windows={len(data.train)}")
    report = train(model, data, tcfg, opt, log=log)
    return RunResult(cfg, model, report, data, opt)


def make_checkpoint(cfg: RunConfig, model: MixerModel, opt: Optional[AdamState] = None,
                    best_val_loss: float = float("nan")) -> ckpt_io.Checkpoint:
    arrays = {name: p.value for name, p in model.params.items()}
    if opt is not None:
        arrays["adam/t"] = np.array([float(opt.t)])
        for name, p in model.params.items():
            arrays[f"adam/m/{name}"] = p.m
        for name, p in model.params.items():
            arrays[f"adam/v/{name}"] = p.v
    arrays["meta/best_val_loss"] = np.array([best_val_loss])
    cfg = RunConfig(**{**cfg.__dict__, "c": model.cfg.c})
    return ckpt_io.Checkpoint(cfg.to_text(), arrays)


def restore(ckpt: ckpt_io.Checkpoint) -> tuple[RunConfig, MixerModel, AdamState]:
    """Rebuild the configuration, model and optimizer state from a checkpoint."""
    cfg = parse_config(ckpt.config_text, "<checkpoint>")
    model = MixerModel(cfg.mixer_config())
    missing = [name for name in model.params if name not in ckpt.arrays]
    if missing:
        raise ckpt_io.CheckpointError(f"checkpoint lacks parameters {missing}")
    for name, p in model.params.items():
        value = ckpt.arrays[name]
        if value.shape != p.shape:
            raise ckpt_io.CheckpointError(f"{name}: shape {value.shape}, expected {p.shape}")
        p.value = value.copy()
        if f"adam/m/{name}" in ckpt.arrays:
            p.m = ckpt.arrays[f"adam/m/{name}"].copy()
            p.v = ckpt.arrays[f"adam/v/{name}"].copy()
    opt = AdamState(cfg.train_config().lr)
    if "adam/t" in ckpt.arrays:
        opt.t = int(ckpt.arrays["adam/t"][0])
    return cfg, model, opt


def save_run(result: RunResult, out_dir: Path) -> dict[str, Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {"checkpoint": out_dir / "model.mtsm", "metrics": out_dir / "metrics.csv"}
    ckpt = make_checkpoint(result.cfg, result.model, result.opt, result.report.best_val_loss)
    ckpt_io.save(paths["checkpoint"], ckpt)
    write_metrics_csv(paths["metrics"], [result.metrics()], METRIC_FIELDS)
    return paths


def eval_run(checkpoint_path, data_path) -> dict:
    cfg, model, _ = restore(ckpt_io.load(checkpoint_path))
    raw = load_series(cfg, str(data_path))
    if raw.c != model.cfg.c:
        raise DataError(f"channel mismatch: checkpoint expects c={model.cfg.c}, "
                        f"data has c={raw.c}")
    data = build_datasets(cfg, raw)
    start = time.monotonic()
    mse, mae = evaluate(model, data.test)
    return metrics_record(cfg, mse, mae, time.monotonic() - start)


def time_epochs(result: RunResult, runs: int) -> dict[str, float]:
    """Wall-clock of one training epoch and one test-set inference pass, ``runs`` times each."""
    train_s, infer_s = [], []
    values = result.model.state_values()
    tcfg = result.cfg.train_config()
    for i in range(runs):
        model = MixerModel(result.model.cfg, seed=result.cfg.seed)
        model.load_values(values)
        start = time.monotonic()
        run_epoch(model, result.data.train, AdamState(tcfg.lr), tcfg, epoch=1000 + i)
        train_s.append(time.monotonic() - start)
        start = time.monotonic()
        evaluate(result.model, result.data.test)
        infer_s.append(time.monotonic() - start)

    def stats(xs):
        if not xs:
            return float("nan"), float("nan")
        return statistics.fmean(xs), statistics.pstdev(xs) if len(xs) > 1 else 0.0

    (tm, ts), (im, is_) = stats(train_s), stats(infer_s)
    return {"train_seconds": tm, "train_seconds_std": ts,
            "infer_seconds": im, "infer_seconds_std": is_}


# -- weight export ----------------------------------------------------------

def matrix_to_csv(value: np.ndarray) -> str:
    rows = value.reshape(1, -1) if value.ndim == 1 else value
    buf = io.StringIO()
    for row in rows:
        buf.write(",".join(repr(float(v)) for v in row) + "\n")
    return buf.getvalue()


def load_matrix_csv(path) -> np.ndarray:
    rows = [[float(v) for v in line.split(",")]
            for line in Path(path).read_text().splitlines() if line.strip()]
    return np.array(rows, dtype=np.float64)


def export_weights(checkpoint_path, pattern: str, out_dir) -> list[Path]:
    ckpt = ckpt_io.load(checkpoint_path)
    params = ckpt.params()
    names = [n for n in params if fnmatch.fnmatchcase(n, pattern)]
    if not names:
        raise KeyError(f"no parameter matches {pattern!r}; available: {', '.join(params)}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for name in names:
        path = out_dir / f"{name}.csv"
        path.write_text(matrix_to_csv(params[name]))
        written.append(path)
    return written
