"""The mixer model family: factorized temporal and channel mixing.

Data flows as ``(batch, time, channel)`` tensors (the batch axis may be
absent). One stacked unit computes::

    temporal = Temporal(h)                 # per interleaved subsequence
    channel  = Channel(h + temporal)       # rank-r bottleneck, skipped if r == 0
    h        = temporal + channel

and after ``blocks`` units a single linear map over the time axis produces
the ``m_pred`` forecast steps. The matrix variant instead computes
``F @ act(T @ x) @ C`` directly.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, fields
from typing import Mapping, Optional

import numpy as np

from . import nn
from .autodiff import (
    Tape,
    Tensor,
    add,
    concat_cols,
    gelu,
    matmul,
    merge_rows_strided,
    mul,
    scale,
    slice_cols,
    slice_rows_strided,
    softmax_rows,
    transpose,
)
from .linalg import denoise_projector, svd_denoise  # noqa: F401 - re-exported
from .nn import ParamSpec

logger = logging.getLogger(__name__)

VARIANTS = ("mlp", "attention", "matrix", "linear")
CHANNEL_MODES = ("mlp", "svd", "drop")
ACTIVATIONS = ("none", "gelu")
MATRIX_INITS = ("random", "identity")


class ConfigError(ValueError):
    """Raised for an invalid model configuration."""


@dataclass
class MixerConfig:
    variant: str = "mlp"
    n: int = 96
    m_pred: int = 96
    c: int = 7
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

    def validate(self) -> "MixerConfig":
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.n < 2:
            raise ConfigError(f"input horizon n must be >= 2, got {self.n}")
        if self.m_pred < 1:
            raise ConfigError(f"prediction horizon m_pred must be >= 1, got {self.m_pred}")
        if self.c < 1:
            raise ConfigError(f"channel count c must be >= 1, got {self.c}")
        if self.s < 1 or self.n % self.s:
            raise ConfigError(
                f"subsequence count s must divide the input horizon n (n={self.n}, s={self.s})")
        if self.r < 0:
            raise ConfigError(f"channel rank r must be >= 0, got {self.r}")
        if self.blocks < 1:
            raise ConfigError(f"blocks must be >= 1, got {self.blocks}")
        if self.d_temporal < 1 or self.d_ffn < 1:
            raise ConfigError("hidden widths must be >= 1")
        if self.matrix_init not in MATRIX_INITS:
            raise ConfigError(f"matrix_init must be one of {MATRIX_INITS}, got {self.matrix_init!r}")
        for key in ("matrix_activation", "matrix_channel_activation"):
            if getattr(self, key) not in ACTIVATIONS:
                raise ConfigError(f"{key} must be one of {ACTIVATIONS}")
        if self.channel_mode not in CHANNEL_MODES:
            raise ConfigError(f"channel_mode must be one of {CHANNEL_MODES}")
        if self.channel_mode != "mlp" and self.variant != "mlp":
            raise ConfigError("channel_mode svd/drop is only available for the mlp variant")
        if not 0.0 < self.svd_keep <= 1.0:
            raise ConfigError("svd_keep must be in (0, 1]")
        if not 0.0 <= self.drop_fraction < 1.0:
            raise ConfigError("drop_fraction must be in [0, 1)")
        if self.r >= self.c and self.channel_mode == "mlp" and self.variant != "linear":
            logger.warning("channel rank r=%d is not below c=%d; the channel stage is "
                           "not a bottleneck", self.r, self.c)
        return self

    @property
    def sub_len(self) -> int:
        return self.n // self.s

    @property
    def heads(self) -> int:
        return 1 if self.c < 2 else least_prime_factor(self.c)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


def least_prime_factor(c: int) -> int:
    if c < 2:
        raise ValueError(f"least_prime_factor needs c >= 2, got {c}")
    p = 2
    while p * p <= c:
        if c % p == 0:
            return p
        p += 1
    return c


# -- temporal factorization -------------------------------------------------

def downsample(x, s: int) -> list[Tensor]:
    """Split rows into ``s`` interleaved subsequences; subsequence i holds rows i, i+s, ..."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    if s < 1 or x.shape[-2] % s:
        raise ConfigError(f"s must divide the number of rows ({x.shape[-2]}), got s={s}")
    return [slice_rows_strided(x, i, s) for i in range(s)]


def merge(subseqs) -> Tensor:
    """Inverse of :func:`downsample`."""
    return merge_rows_strided(subseqs)


def _extractor_names(cfg: MixerConfig, prefix: str) -> list[str]:
    if cfg.shared_temporal or cfg.s == 1:
        return [prefix] * cfg.s
    return [f"{prefix}{i}" for i in range(cfg.s)]


def _time_mlp(w: Mapping[str, Tensor], prefix: str, x: Tensor) -> Tensor:
    # the MLP acts along time, identically for each channel
    return transpose(nn.ffn(w, prefix, transpose(x)))


def attention(w: Mapping[str, Tensor], prefix: str, x: Tensor, heads: int) -> Tensor:
    """Multi-head self-attention over the time positions of ``x``."""
    c = x.shape[-1]
    if c % heads:
        raise ConfigError(f"head count {heads} does not divide c={c}")
    dh = c // heads
    q = nn.linear(w, f"{prefix}.q", x)
    k = nn.linear(w, f"{prefix}.k", x)
    v = nn.linear(w, f"{prefix}.v", x)
    outs = []
    for j in range(heads):
        lo, hi = j * dh, (j + 1) * dh
        qh, kh, vh = slice_cols(q, lo, hi), slice_cols(k, lo, hi), slice_cols(v, lo, hi)
        scores = scale(matmul(qh, transpose(kh)), 1.0 / math.sqrt(dh))
        outs.append(matmul(softmax_rows(scores), vh))
    heads_out = outs[0] if heads == 1 else concat_cols(outs)
    return nn.linear(w, f"{prefix}.o", heads_out)


def temporal_mix(w: Mapping[str, Tensor], cfg: MixerConfig, x: Tensor, block: int = 0) -> Tensor:
    """Downsample, run each subsequence through its extractor, merge back."""
    if cfg.variant == "mlp":
        names = _extractor_names(cfg, f"block{block}.temporal")
        extract = lambda name, sub: _time_mlp(w, name, sub)  # noqa: E731
    elif cfg.variant == "attention":
        names = _extractor_names(cfg, f"block{block}.attn")
        extract = lambda name, sub: attention(w, name, sub, cfg.heads)  # noqa: E731
    elif cfg.variant == "matrix":
        names = _extractor_names(cfg, "temporal.T")
        extract = lambda name, sub: matmul(w[name], sub)  # noqa: E731
    else:
        raise ConfigError(f"variant {cfg.variant!r} has no temporal stage")
    if cfg.s == 1:
        return extract(names[0], x)
    subs = downsample(x, cfg.s)
    return merge([extract(name, sub) for name, sub in zip(names, subs)])


def attention_mix(w: Mapping[str, Tensor], cfg: MixerConfig, x: Tensor, block: int = 0) -> Tensor:
    if cfg.variant != "attention":
        raise ConfigError("attention_mix needs the attention variant")
    return temporal_mix(w, cfg, x, block)


# -- channel factorization --------------------------------------------------

def channel_mix(x: Tensor, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor) -> Tensor:
    """gelu(x @ w1.T + b1) @ w2.T + b2 with w1: r x c, w2: c x r."""
    return nn.ffn_forward(x, w1, b1, w2, b2)


def channel_drop(x: np.ndarray, fraction: float, seed: int) -> np.ndarray:
    """Zero ``floor(fraction * c)`` distinct channels chosen by a seeded shuffle."""
    if not 0.0 <= fraction < 1.0:
        raise ValueError(f"fraction must be in [0, 1), got {fraction}")
    x = np.array(x, dtype=np.float64)
    return x * _drop_mask(x.shape[-1], fraction, seed)


def _drop_mask(c: int, fraction: float, seed: int) -> np.ndarray:
    k = int(math.floor(fraction * c))
    order = nn.stream(seed, "channel_drop").shuffle(list(range(c)))
    mask = np.ones(c)
    mask[order[:k]] = 0.0
    return mask


def _channel_stage(w, cfg: MixerConfig, x: Tensor, block: int, training: bool,
                   step: int) -> Optional[Tensor]:
    if cfg.channel_mode == "svd":
        return matmul(x, Tensor(denoise_projector(x.data, cfg.svd_keep)))
    if cfg.channel_mode == "drop":
        if not training:
            return x
        return mul(x, Tensor(_drop_mask(x.shape[-1], cfg.drop_fraction, step)))
    if cfg.variant == "attention":
        prefix = f"block{block}.ffn" if cfg.r == 0 else f"block{block}.channel"
        return nn.ffn(w, prefix, x)
    if cfg.r == 0:
        return None
    return nn.ffn(w, f"block{block}.channel", x)


# -- parameters -------------------------------------------------------------

def parameter_specs(cfg: MixerConfig) -> list[ParamSpec]:
    cfg.validate()
    n, c, m = cfg.n, cfg.c, cfg.m_pred
    specs: list[ParamSpec] = []
    if cfg.revin and cfg.revin_affine:
        specs += [ParamSpec("revin.gamma", (c,), "ones"), ParamSpec("revin.beta", (c,), "zeros")]

    if cfg.variant == "matrix":
        ident = "identity" if cfg.matrix_init == "identity" else "uniform"
        for name in dict.fromkeys(_extractor_names(cfg, "temporal.T")):
            specs.append(ParamSpec(name, (cfg.sub_len, cfg.sub_len), ident))
        if cfg.r == 0:
            specs.append(ParamSpec("channel.C", (c, c), ident))
        else:
            specs += [ParamSpec("channel.U", (c, cfg.r)), ParamSpec("channel.V", (cfg.r, c))]
        specs.append(ParamSpec("final_linear.weight", (m, n), ident))
        return specs

    for b in range(cfg.blocks if cfg.variant != "linear" else 0):
        if cfg.variant == "mlp":
            for name in dict.fromkeys(_extractor_names(cfg, f"block{b}.temporal")):
                specs += nn.ffn_specs(name, cfg.sub_len, cfg.d_temporal)
        else:
            for name in dict.fromkeys(_extractor_names(cfg, f"block{b}.attn")):
                for proj in ("q", "k", "v", "o"):
                    # a key bias only shifts each score row by a constant, which softmax ignores
                    specs += nn.linear_specs(f"{name}.{proj}", c, c, bias=proj != "k")
            if cfg.r == 0:
                specs += nn.ffn_specs(f"block{b}.ffn", c, cfg.d_ffn)
        if cfg.r > 0 and cfg.channel_mode == "mlp":
            specs += nn.ffn_specs(f"block{b}.channel", c, cfg.r)
    specs += nn.linear_specs("final_linear", n, m)
    return specs


# -- forward ----------------------------------------------------------------

def _act(kind: str, x: Tensor) -> Tensor:
    return gelu(x) if kind == "gelu" else x


def matrix_forward(x, T, C, F, cfg: MixerConfig) -> Tensor:
    """F @ act(T @ x) @ C with an optional activation after each mixing step.

    ``T`` is one n x n tensor, or a list of s blocks acting on the
    interleaved subsequences (block-diagonal in the downsampled order).
    """
    x = x if isinstance(x, Tensor) else Tensor(x)
    if isinstance(T, (list, tuple)):
        if len(T) == 1:
            T = list(T) * cfg.s
        y = merge([matmul(t, sub) for t, sub in zip(T, downsample(x, cfg.s))])
    else:
        y = matmul(T, x)
    y = _act(cfg.matrix_activation, y)
    y = _act(cfg.matrix_channel_activation, matmul(y, C))
    return matmul(F, y)


def model_forward(cfg: MixerConfig, w: Mapping[str, Tensor], x, *,
                  training: bool = False, step: int = 0) -> Tensor:
    """Map a ``(batch?, n, c)`` history window to a ``(batch?, m_pred, c)`` forecast."""
    data = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    if data.shape[-2:] != (cfg.n, cfg.c):
        raise ConfigError(f"input window shape {data.shape[-2:]} does not match "
                          f"(n={cfg.n}, c={cfg.c})")
    state = None
    if cfg.revin:
        h, state = nn.revin_normalize(data, w.get("revin.gamma"), w.get("revin.beta"))
    else:
        h = Tensor(data)
    if cfg.pos_encoding:
        h = add(h, Tensor(nn.positional_encoding(cfg.n, cfg.c)))

    if cfg.variant == "matrix":
        T = [w[name] for name in dict.fromkeys(_extractor_names(cfg, "temporal.T"))]
        C = w["channel.C"] if cfg.r == 0 else matmul(w["channel.U"], w["channel.V"])
        out = matrix_forward(h, T if cfg.s > 1 else T[0], C, w["final_linear.weight"], cfg)
    else:
        if cfg.variant != "linear":
            for b in range(cfg.blocks):
                xt = temporal_mix(w, cfg, h, b)
                xc = _channel_stage(w, cfg, add(h, xt), b, training, step)
                h = xt if xc is None else add(xt, xc)
        out = transpose(nn.linear(w, "final_linear", transpose(h)))

    if state is not None:
        out = nn.revin_invert(out, state)
    return out


class MixerModel:
    """A configuration plus its named parameters."""

    def __init__(self, cfg: MixerConfig, seed: int = 0,
                 params: Optional[dict[str, nn.Parameter]] = None):
        self.cfg = cfg.validate()
        self.seed = seed
        self.params = params if params is not None else nn.init_parameters(parameter_specs(cfg), seed)

    def weights(self, tape: Optional[Tape] = None) -> dict[str, Tensor]:
        if tape is None:
            return {name: Tensor(p.value) for name, p in self.params.items()}
        return {name: tape.watch(p.value) for name, p in self.params.items()}

    def forward(self, x, tape: Optional[Tape] = None, *, training: bool = False,
                step: int = 0) -> tuple[Tensor, dict[str, Tensor]]:
        w = self.weights(tape)
        return model_forward(self.cfg, w, x, training=training, step=step), w

    def predict(self, x: np.ndarray, chunk: int = 256) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 2:
            return model_forward(self.cfg, self.weights(), x).data
        w = self.weights()
        parts = [model_forward(self.cfg, w, x[i:i + chunk]).data
                 for i in range(0, len(x), chunk)]
        return np.concatenate(parts, axis=0)

    def state_values(self) -> dict[str, np.ndarray]:
        return {name: p.value.copy() for name, p in self.params.items()}

    def load_values(self, values: Mapping[str, np.ndarray]) -> None:
        for name, p in self.params.items():
            p.value = np.array(values[name], dtype=np.float64)


def param_count(model_or_cfg) -> tuple[int, dict[str, int]]:
    """Total trainable scalars and a breakdown by top-level module path."""
    if isinstance(model_or_cfg, MixerModel):
        sizes = {n: p.size for n, p in model_or_cfg.params.items()}
    else:
        sizes = {s.name: int(np.prod(s.shape)) for s in parameter_specs(model_or_cfg)}
    breakdown: dict[str, int] = {}
    for name, size in sizes.items():
        key = name.rsplit(".", 1)[0]
        breakdown[key] = breakdown.get(key, 0) + size
    return sum(sizes.values()), breakdown
