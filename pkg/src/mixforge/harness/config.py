"""Flat ``key = value`` run configuration files.

Lines starting with ``#`` are comments, as is anything after `` #``. Keys
are the fields of :class:`RunConfig`; unknown or repeated keys are errors.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Optional

from ..data import (
    DEFAULT_RATIOS,
    ETT_RATIOS,
    Datasets,
    RawSeries,
    ett_split,
    load_csv,
    prepare,
    split,
    synth_generate,
)
from ..mixer import ConfigError, MixerConfig
from ..train import TrainConfig

SEED_ENV = "MIXFORGE_SEED"

# (learning rate, batch size) per dataset family
DATASET_DEFAULTS = {
    "ecl": (1e-3, 16),
    "traffic": (5e-2, 16),
    "pems04": (5e-3, 16),
    "exchange": (5e-4, 8),
    "weather": (1e-3, 16),
    "ili": (1e-2, 32),
    "ett": (5e-3, 32),
    "synth": (1e-3, 32),
}


def dataset_family(name: str) -> str:
    key = name.lower()
    if key.startswith("ett"):
        return "ett"
    for family, prefixes in (("ecl", ("ecl", "electricity")), ("traffic", ("traffic",)),
                             ("pems04", ("pems",)), ("exchange", ("exchange",)),
                             ("weather", ("weather",)), ("ili", ("ili", "national_illness"))):
        if key.startswith(prefixes):
            return family
    return "synth"


@dataclass
class RunConfig:
    # data source: a CSV path, or a synthetic generator when data is empty
    data: str = ""
    dataset: str = ""
    synth: str = "sum-of-sines"
    synth_length: int = 2000
    synth_channels: int = 7
    synth_latents: int = 2
    synth_noise: float = 0.0
    synth_seed: int = 0
    split: str = "ratio"  # ratio | ett
    ratios: str = ""
    # model
    variant: str = "mlp"
    n: int = 96
    m_pred: int = 96
    c: int = 0  # 0: take from the data
    s: int = 1
    r: int = 0
    d_temporal: int = 512
    d_ffn: int = 512
    blocks: int = 2
    shared_temporal: bool = False
    revin: bool = True
    revin_affine: bool = True
    pos_encoding: bool = False
    matrix_init: str = "random"
    matrix_activation: str = "none"
    matrix_channel_activation: str = "none"
    channel_mode: str = "mlp"
    svd_keep: float = 0.1
    drop_fraction: float = 0.1
    # training
    lr: float = 0.0  # 0: dataset default
    batch_size: int = 0  # 0: dataset default
    seed: int = 1024
    max_epochs: int = 10
    patience: int = 3
    output_dir: str = "runs/latest"
    timing_runs: int = 3

    @property
    def dataset_name(self) -> str:
        if self.dataset:
            return self.dataset
        if self.data:
            return Path(self.data).stem
        return f"synth-{self.synth}"

    @property
    def family(self) -> str:
        return dataset_family(self.dataset_name) if self.data or self.dataset else "synth"

    def resolved(self) -> "RunConfig":
        """Fill dataset-dependent defaults (lr, batch size, split ratios)."""
        lr, batch = DATASET_DEFAULTS[self.family]
        ratios = self.ratios or ",".join(
            repr(r) for r in (ETT_RATIOS if self.family == "ett" else DEFAULT_RATIOS))
        return replace(self, lr=self.lr or lr, batch_size=self.batch_size or batch, ratios=ratios)

    def ratio_tuple(self) -> tuple[float, float, float]:
        parts = [float(p) for p in self.resolved().ratios.split(",")]
        if len(parts) != 3:
            raise ConfigError(f"ratios needs three comma-separated numbers, got {self.ratios!r}")
        return tuple(parts)  # type: ignore[return-value]

    def mixer_config(self, c: Optional[int] = None) -> MixerConfig:
        names = MixerConfig.field_names()
        values = {k: getattr(self, k) for k in names if k != "c"}
        return MixerConfig(c=c or self.c, **values).validate()

    def train_config(self) -> TrainConfig:
        r = self.resolved()
        return TrainConfig(lr=r.lr, batch_size=r.batch_size, seed=self.seed,
                           max_epochs=self.max_epochs, patience=self.patience)

    def validate(self) -> "RunConfig":
        if self.split not in ("ratio", "ett"):
            raise ConfigError(f"split must be 'ratio' or 'ett', got {self.split!r}")
        if self.lr < 0 or self.batch_size < 0:
            raise ConfigError("lr and batch_size must be non-negative")
        if self.max_epochs < 1 or self.patience < 1:
            raise ConfigError("max_epochs and patience must be >= 1")
        if self.timing_runs < 0:
            raise ConfigError("timing_runs must be >= 0")
        self.ratio_tuple()
        # every model check except the channel count, which may come from the data
        self.mixer_config(c=self.c or (self.r + 1 if self.data else self.synth_channels))
        return self

    def to_text(self) -> str:
        return "".join(f"{f.name}={format_value(getattr(self, f.name))}\n" for f in fields(self))

    def to_inline(self) -> str:
        return ";".join(f"{f.name}={format_value(getattr(self, f.name))}" for f in fields(self))


def format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def coerce(key: str, raw: str):
    if key not in _FIELD_TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    kind = _FIELD_TYPES[key]
    text = raw.strip()
    try:
        if kind in ("bool", bool):
            low = text.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(text)
        if kind in ("int", int):
            return int(text)
        if kind in ("float", float):
            return float(text)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    return text


def parse_pairs(text: str, source: str = "<config>", repeatable: tuple[str, ...] = ()):
    """Yield ``(line_no, key, value)`` for each non-comment line."""
    seen = set()
    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.split(" #", 1)[0].strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{line_no}: expected key=value, got {line!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        if key in seen and key not in repeatable:
            raise ConfigError(f"{source}:{line_no}: duplicate key {key!r}")
        seen.add(key)
        yield line_no, key, value


def apply_overrides(cfg: RunConfig, pairs: dict[str, str]) -> RunConfig:
    return replace(cfg, **{k: coerce(k, v) for k, v in pairs.items()})


def parse_config(text: str, source: str = "<config>", base_dir: Optional[Path] = None) -> RunConfig:
    values = {}
    for line_no, key, value in parse_pairs(text, source):
        try:
            values[key] = coerce(key, value)
        except ConfigError as exc:
            raise ConfigError(f"{source}:{line_no}: {exc}") from None
    cfg = RunConfig(**values)
    if cfg.data and base_dir is not None and not Path(cfg.data).is_absolute():
        cfg = replace(cfg, data=str((base_dir / cfg.data).resolve()))
    return cfg


def load_config(path, env: Optional[dict] = None) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    cfg = parse_config(text, str(path), path.parent)
    env = os.environ if env is None else env
    if env.get(SEED_ENV):
        try:
            cfg = replace(cfg, seed=int(env[SEED_ENV]))
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env[SEED_ENV]!r}") from None
    return cfg.validate()


# -- data for a run ---------------------------------------------------------

def load_series(cfg: RunConfig, data_path: Optional[str] = None) -> RawSeries:
    path = data_path or cfg.data
    if path:
        return load_csv(path)
    return synth_generate(cfg.synth, cfg.synth_length, cfg.synth_channels, cfg.synth_seed,
                          latents=cfg.synth_latents, noise=cfg.synth_noise)


def build_datasets(cfg: RunConfig, raw: RawSeries) -> Datasets:
    if cfg.split == "ett":
        per_hour = 4 if cfg.dataset_name.lower().startswith("ettm") else 1
        ranges = ett_split(raw.length, cfg.n, cfg.m_pred, per_hour)
    else:
        ranges = split(raw.length, cfg.ratio_tuple(), cfg.n, cfg.m_pred)
    return prepare(raw, cfg.n, cfg.m_pred, ranges)
