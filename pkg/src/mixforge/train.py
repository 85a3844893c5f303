"""Loss, metrics, Adam and the early-stopped training loop."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

import numpy as np

from . import autodiff as ad
from .data import Datasets, WindowedDataset
from .mixer import MixerModel
from .nn import Parameter, stream

logger = logging.getLogger(__name__)

MAX_EPOCHS = 10
PATIENCE = 3


def _pair(y, yhat) -> tuple[np.ndarray, np.ndarray]:
    y = y.data if isinstance(y, ad.Tensor) else np.asarray(y, dtype=np.float64)
    yhat = yhat.data if isinstance(yhat, ad.Tensor) else np.asarray(yhat, dtype=np.float64)
    if y.shape != yhat.shape:
        raise ValueError(f"shape mismatch: {y.shape} vs {yhat.shape}")
    return y, yhat


def mse(y, yhat) -> float:
    y, yhat = _pair(y, yhat)
    return float(np.mean((y - yhat) ** 2))


def mae(y, yhat) -> float:
    y, yhat = _pair(y, yhat)
    return float(np.mean(np.abs(y - yhat)))


def mse_loss(target, pred: ad.Tensor) -> ad.Tensor:
    """Differentiable mean squared error."""
    if tuple(np.shape(target)) != pred.shape:
        raise ValueError(f"shape mismatch: {np.shape(target)} vs {pred.shape}")
    return ad.mean(ad.square(ad.sub(pred, ad.Tensor(target))))


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0

    def __post_init__(self):
        if not self.lr >= 0:
            raise ValueError(f"learning rate must be >= 0, got {self.lr}")


def adam_step(params: Iterable[Parameter], state: AdamState) -> None:
    """One bias-corrected Adam update; gradients are zeroed afterwards."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p in params:
        g = p.grad
        p.m = b1 * p.m + (1.0 - b1) * g
        p.v = b2 * p.v + (1.0 - b2) * g * g
        m_hat = p.m / c1
        v_hat = p.v / c2
        p.value = p.value - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        p.grad = np.zeros_like(p.value)


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 32
    seed: int = 1024
    max_epochs: int = MAX_EPOCHS
    patience: int = PATIENCE


@dataclass
class TrainReport:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    epoch_seconds: list[float] = field(default_factory=list)
    best_epoch: int = 0  # 1-based
    best_val_loss: float = float("inf")
    test_mse: float = float("nan")
    test_mae: float = float("nan")

    @property
    def seconds(self) -> float:
        return float(sum(self.epoch_seconds))

    def epoch_record(self, epoch: int) -> str:
        i = epoch - 1
        return (f"epoch={epoch} train_loss={self.train_loss[i]!r} val_loss={self.val_loss[i]!r} "
                f"seconds={self.epoch_seconds[i]:.3f}")


def evaluate(model: MixerModel, ds: WindowedDataset, chunk: int = 256) -> tuple[float, float]:
    """Test-style (MSE, MAE) over every window of ``ds``."""
    sq = ab = 0.0
    count = 0
    for lo in range(0, len(ds), chunk):
        hist, fut = ds.batch(np.arange(lo, min(lo + chunk, len(ds))))
        pred = model.predict(hist)
        sq += float(((pred - fut) ** 2).sum())
        ab += float(np.abs(pred - fut).sum())
        count += pred.size
    return sq / count, ab / count


def epoch_order(n_windows: int, seed: int, epoch: int) -> list[int]:
    return stream(seed, f"shuffle/{epoch}").shuffle(list(range(n_windows)))


def train_step(model: MixerModel, hist: np.ndarray, fut: np.ndarray, step: int) -> float:
    """Forward + backward on one batch; writes gradients into the parameters."""
    tape = ad.Tape()
    pred, w = model.forward(hist, tape, training=True, step=step)
    loss = mse_loss(fut, pred)
    value = float(loss.data[0])
    if not np.isfinite(value):
        return value
    grads = ad.backward(tape, loss)
    for name, p in model.params.items():
        p.grad = p.grad + grads[w[name].node].data
    return value


def run_epoch(model: MixerModel, ds: WindowedDataset, opt: AdamState, cfg: TrainConfig,
              epoch: int) -> float:
    order = np.array(epoch_order(len(ds), cfg.seed, epoch), dtype=np.int64)
    total = 0.0
    for b, lo in enumerate(range(0, len(order), cfg.batch_size)):
        idx = order[lo:lo + cfg.batch_size]
        hist, fut = ds.batch(idx)
        loss = train_step(model, hist, fut, step=opt.t)
        if not np.isfinite(loss):
            raise FloatingPointError(f"non-finite loss {loss} at epoch {epoch}, batch {b} "
                                     f"(window indices {idx[:8].tolist()}...)")
        adam_step(model.params.values(), opt)
        total += loss * len(idx)
    return total / len(order)


def train(model: MixerModel, data: Datasets, cfg: TrainConfig,
          opt: Optional[AdamState] = None,
          log: Callable[[str], None] = print) -> TrainReport:
    """Train with early stopping on validation MSE and restore the best epoch."""
    for role in ("train", "val", "test"):
        if len(data[role]) == 0:
            raise ValueError(f"{role} split is empty")
    opt = opt or AdamState(cfg.lr)
    report = TrainReport()
    best_values = model.state_values()
    stale = 0
    for epoch in range(1, cfg.max_epochs + 1):
        start = time.monotonic()
        train_loss = run_epoch(model, data.train, opt, cfg, epoch)
        elapsed = time.monotonic() - start
        val_loss, _ = evaluate(model, data.val)
        report.train_loss.append(train_loss)
        report.val_loss.append(val_loss)
        report.epoch_seconds.append(elapsed)
        log(report.epoch_record(epoch))
        if val_loss < report.best_val_loss:
            report.best_val_loss = val_loss
            report.best_epoch = epoch
            best_values = model.state_values()
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    model.load_values(best_values)
    report.test_mse, report.test_mae = evaluate(model, data.test)
    log(f"best_epoch={report.best_epoch} best_val_loss={report.best_val_loss!r} "
        f"test_mse={report.test_mse!r} test_mae={report.test_mae!r}")
    return report
