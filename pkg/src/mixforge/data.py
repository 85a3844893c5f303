"""CSV ingestion, chronological splits, standardization and sliding windows."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

STD_FLOOR = 1e-8
SPLITS = ("train", "val", "test")
ETT_RATIOS = (0.6, 0.2, 0.2)
DEFAULT_RATIOS = (0.7, 0.1, 0.2)


class DataError(ValueError):
    """Raised for malformed input data or impossible splits."""


@dataclass(frozen=True)
class RawSeries:
    channels: list[str]
    values: np.ndarray  # (L, c)
    source: str = ""

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @property
    def c(self) -> int:
        return self.values.shape[1]


def load_csv(path) -> RawSeries:
    """Read a header-first CSV; a leading ``date`` column is dropped.

    Parse errors name the 1-based data row (header excluded) and the 1-based
    file column of the offending cell.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        skip = 1 if header and header[0].strip().lower() == "date" else 0
        channels = [h.strip() for h in header[skip:]]
        if not channels:
            raise DataError(f"{path}: no value columns")
        rows = []
        for row_no, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}: row {row_no} has {len(row)} fields, "
                                f"expected {len(header)}")
            values = []
            for col_no, cell in enumerate(row[skip:], start=skip + 1):
                try:
                    v = float(cell)
                except ValueError:
                    raise DataError(f"{path}: cannot parse {cell!r} at (row {row_no}, "
                                    f"column {col_no})") from None
                if not math.isfinite(v):
                    raise DataError(f"{path}: non-finite value {cell!r} at (row {row_no}, "
                                    f"column {col_no})")
                values.append(v)
            rows.append(values)
    if not rows:
        raise DataError(f"{path}: no data rows")
    return RawSeries(channels, np.array(rows, dtype=np.float64), str(path))


def write_csv(path, series: RawSeries, with_date: bool = False) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow((["date"] if with_date else []) + list(series.channels))
        for i, row in enumerate(series.values):
            w.writerow(([str(i)] if with_date else []) + [repr(float(v)) for v in row])


# -- splits -----------------------------------------------------------------

@dataclass(frozen=True)
class SplitRanges:
    """Half-open target ranges ``[start, stop)`` per split."""

    train: tuple[int, int]
    val: tuple[int, int]
    test: tuple[int, int]

    def __getitem__(self, role: str) -> tuple[int, int]:
        return getattr(self, role)


def split(length: int, ratios: Sequence[float], n: int, m_pred: int) -> SplitRanges:
    """Contiguous chronological ranges by floor of the cumulative ratios."""
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9:
        raise DataError(f"split ratios must be three numbers summing to 1, got {ratios}")
    # the tolerance keeps decimal ratios exact: 0.8 * 30 evaluates to 23.999...
    b1 = math.floor(ratios[0] * length + 1e-9)
    b2 = math.floor((ratios[0] + ratios[1]) * length + 1e-9)
    ranges = SplitRanges((0, b1), (b1, b2), (b2, length))
    _check_ranges(ranges, n, m_pred)
    return ranges


def ett_split(length: int, n: int, m_pred: int, steps_per_hour: int = 1) -> SplitRanges:
    """Fixed 12/4/4-month borders used by the ETT benchmark line (30-day months).

    ``steps_per_hour`` is 1 for ETTh* and 4 for the 15-minute ETTm* files.
    """
    month = 30 * 24 * steps_per_hour
    b1, b2, b3 = 12 * month, 16 * month, 20 * month
    if length < b3:
        raise DataError(f"ETT split needs {b3} rows, series has {length}")
    ranges = SplitRanges((0, b1), (b1, b2), (b2, b3))
    _check_ranges(ranges, n, m_pred)
    return ranges


def _check_ranges(ranges: SplitRanges, n: int, m_pred: int) -> None:
    for role in SPLITS:
        lo, hi = ranges[role]
        if hi - lo < n + m_pred:
            raise DataError(f"{role} split has {hi - lo} steps; needs at least "
                            f"n + m_pred = {n + m_pred}")


def window_starts(ranges: SplitRanges, role: str, n: int, m_pred: int) -> np.ndarray:
    """Forecast-origin indices t for one split.

    The target rows ``t .. t+m_pred-1`` lie inside the split; the history
    ``t-n .. t-1`` may reach back into the preceding split.
    """
    lo, hi = ranges[role]
    first = max(lo, n)
    return np.arange(first, hi - m_pred + 1, dtype=np.int64)


# -- standardization --------------------------------------------------------

@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, values: np.ndarray) -> "Standardizer":
        return cls(values.mean(axis=0), np.maximum(values.std(axis=0), STD_FLOOR))

    def transform(self, values: np.ndarray) -> np.ndarray:
        return (values - self.mean) / self.std

    def inverse_transform(self, values: np.ndarray) -> np.ndarray:
        return values * self.std + self.mean


def standardize(raw: RawSeries, train_range: tuple[int, int]) -> tuple[Standardizer, np.ndarray]:
    lo, hi = train_range
    if hi - lo < 1:
        raise DataError("train range is empty")
    scaler = Standardizer.fit(raw.values[lo:hi])
    return scaler, scaler.transform(raw.values)


# -- windows ----------------------------------------------------------------

@dataclass(frozen=True)
class WindowedDataset:
    values: np.ndarray  # standardized full series (L, c)
    role: str
    starts: np.ndarray
    n: int
    m_pred: int

    def __len__(self) -> int:
        return len(self.starts)

    def batch(self, idx: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Stacked (history, target) pairs for the given window indices."""
        t = self.starts[idx]
        hist = self.values[t[:, None] + np.arange(-self.n, 0)]
        fut = self.values[t[:, None] + np.arange(self.m_pred)]
        return hist, fut

    def __iter__(self) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        return window(self)


def window(ds: WindowedDataset, stride: int = 1) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    for t in ds.starts[::stride]:
        yield ds.values[t - ds.n:t], ds.values[t:t + ds.m_pred]


@dataclass(frozen=True)
class Datasets:
    raw: RawSeries
    scaler: Standardizer
    ranges: SplitRanges
    train: WindowedDataset
    val: WindowedDataset
    test: WindowedDataset

    def __getitem__(self, role: str) -> WindowedDataset:
        return getattr(self, role)


def prepare(raw: RawSeries, n: int, m_pred: int, ranges: SplitRanges) -> Datasets:
    if raw.length < n + m_pred:
        raise DataError(f"series length {raw.length} is shorter than n + m_pred = {n + m_pred}")
    scaler, values = standardize(raw, ranges.train)
    parts = {role: WindowedDataset(values, role, window_starts(ranges, role, n, m_pred), n, m_pred)
             for role in SPLITS}
    for role, ds in parts.items():
        if len(ds) == 0:
            raise DataError(f"{role} split has no complete windows")
    return Datasets(raw, scaler, ranges, **parts)


# -- synthetic series -------------------------------------------------------

SYNTH_KINDS = ("sine", "sum-of-sines", "low-rank-channels")


def synth_generate(kind: str, length: int, c: int, seed: int, *, latents: int = 2,
                   noise: float = 0.0) -> RawSeries:
    """Deterministic synthetic series.

    ``sine``: one sinusoid per channel with a seeded phase, period 24.
    ``sum-of-sines``: per channel, three sinusoids (periods 24, 12, 8) with
    seeded amplitudes and phases.
    ``low-rank-channels``: ``latents`` sinusoids mixed into ``c`` channels by
    a seeded linear map, plus optional Gaussian noise.
    """
    if length < 1 or c < 1:
        raise DataError("synthetic series needs length, c >= 1")
    rng = np.random.default_rng(seed)
    t = np.arange(length, dtype=np.float64)[:, None]
    if kind == "sine":
        values = np.sin(2 * np.pi * t / 24 + rng.uniform(0, 2 * np.pi, size=c))
    elif kind == "sum-of-sines":
        values = np.zeros((length, c))
        for period in (24, 12, 8):
            amp = rng.uniform(0.3, 1.0, size=c)
            phase = rng.uniform(0, 2 * np.pi, size=c)
            values += amp * np.sin(2 * np.pi * t / period + phase)
    elif kind == "low-rank-channels":
        periods = 24 * 2.0 ** -np.arange(latents) * rng.uniform(0.8, 1.25, size=latents)
        phase = rng.uniform(0, 2 * np.pi, size=latents)
        basis = np.sin(2 * np.pi * t / periods + phase)
        values = basis @ rng.normal(size=(latents, c))
    else:
        raise DataError(f"unknown synthetic kind {kind!r}; expected one of {SYNTH_KINDS}")
    if noise > 0:
        values = values + noise * rng.normal(size=values.shape)
    return RawSeries([f"ch{i}" for i in range(c)], values, f"synth:{kind}")
