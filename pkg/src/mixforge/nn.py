"""Layers, normalization and parameter initialization.

Initial weights come from SplitMix64 so they can be reproduced bit-for-bit
anywhere. The k-th draw (k = 1, 2, ...) of a stream seeded with ``seed`` is::

    z = (seed + k * 0x9E3779B97F4A7C15) mod 2**64
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9 mod 2**64
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB mod 2**64
    z = z ^ (z >> 31)

and a uniform double in [0, 1) is ``(z >> 11) * 2**-53``. Each parameter
draws from its own stream, seeded with ``mix64(seed ^ fnv1a64(name))``, so
adding a parameter never shifts the values of the others.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional

import numpy as np

from .autodiff import Tensor, add, div, gelu, matmul, mul, sub, transpose

GOLDEN = 0x9E3779B97F4A7C15
MASK64 = (1 << 64) - 1
REVIN_EPS = 1e-5


# -- PRNG -------------------------------------------------------------------

def mix64(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def fnv1a64(text: str) -> int:
    h = 0xCBF29CE484222325
    for byte in text.encode("utf-8"):
        h = ((h ^ byte) * 0x100000001B3) & MASK64
    return h


class SplitMix64:
    """Counter-based SplitMix64 stream; ``uniform`` is vectorized with numpy."""

    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + GOLDEN) & MASK64
        return mix64(self.state)

    def uniform(self, size: int) -> np.ndarray:
        k = np.arange(1, size + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self.state) + k * np.uint64(GOLDEN)
            z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
            z = z ^ (z >> np.uint64(31))
        self.state = (self.state + size * GOLDEN) & MASK64
        return (z >> np.uint64(11)).astype(np.float64) * 2.0 ** -53

    def below(self, bound: int) -> int:
        """Integer in [0, bound); rejection sampling keeps it unbiased."""
        limit = (1 << 64) - ((1 << 64) % bound)
        while True:
            z = self.next_u64()
            if z < limit:
                return z % bound

    def shuffle(self, items: list) -> list:
        """Fisher-Yates, in place."""
        for i in range(len(items) - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]
        return items


def stream(seed: int, label: str) -> SplitMix64:
    return SplitMix64(mix64(seed ^ fnv1a64(label)))


# -- parameters -------------------------------------------------------------

@dataclass
class Parameter:
    name: str
    value: np.ndarray
    grad: np.ndarray = field(init=False)
    m: np.ndarray = field(init=False)
    v: np.ndarray = field(init=False)

    def __post_init__(self):
        self.value = np.asarray(self.value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.m = np.zeros_like(self.value)
        self.v = np.zeros_like(self.value)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def size(self) -> int:
        return int(self.value.size)


@dataclass(frozen=True)
class ParamSpec:
    """Shape and init rule for one parameter. ``init`` is one of
    uniform, zeros, ones, identity."""

    name: str
    shape: tuple[int, ...]
    init: str = "uniform"


INIT_MODES = ("uniform", "zeros", "ones", "identity")


def init_parameters(specs: Iterable[ParamSpec], seed: int) -> dict[str, Parameter]:
    params: dict[str, Parameter] = {}
    for spec in specs:
        if spec.name in params:
            raise ValueError(f"duplicate parameter name {spec.name!r}")
        if spec.init == "uniform":
            bound = 1.0 / math.sqrt(spec.shape[-1])
            u = stream(seed, spec.name).uniform(int(np.prod(spec.shape)))
            value = ((2.0 * u - 1.0) * bound).reshape(spec.shape)
        elif spec.init == "zeros":
            value = np.zeros(spec.shape)
        elif spec.init == "ones":
            value = np.ones(spec.shape)
        elif spec.init == "identity":
            if len(spec.shape) != 2:
                raise ValueError(f"identity init needs a matrix, {spec.name} is {spec.shape}")
            value = np.eye(*spec.shape)
        else:
            raise ValueError(f"unknown init mode {spec.init!r}; expected one of {INIT_MODES}")
        params[spec.name] = Parameter(spec.name, value)
    return params


def linear_specs(prefix: str, n_in: int, n_out: int, bias: bool = True) -> list[ParamSpec]:
    specs = [ParamSpec(f"{prefix}.weight", (n_out, n_in))]
    if bias:
        specs.append(ParamSpec(f"{prefix}.bias", (n_out,), "zeros"))
    return specs


# -- layers -----------------------------------------------------------------

def linear_forward(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """x @ weight.T (+ bias), acting on the last axis."""
    out = matmul(x, transpose(weight))
    return out if bias is None else add(out, bias)


def ffn_forward(x: Tensor, w1: Tensor, b1: Optional[Tensor],
                w2: Tensor, b2: Optional[Tensor]) -> Tensor:
    return linear_forward(gelu(linear_forward(x, w1, b1)), w2, b2)


def linear(weights: Mapping[str, Tensor], prefix: str, x: Tensor) -> Tensor:
    return linear_forward(x, weights[f"{prefix}.weight"], weights.get(f"{prefix}.bias"))


def ffn(weights: Mapping[str, Tensor], prefix: str, x: Tensor) -> Tensor:
    return linear(weights, f"{prefix}.fc2", gelu(linear(weights, f"{prefix}.fc1", x)))


def ffn_specs(prefix: str, width: int, hidden: int) -> list[ParamSpec]:
    return linear_specs(f"{prefix}.fc1", width, hidden) + linear_specs(f"{prefix}.fc2", hidden, width)


# -- reversible instance normalization --------------------------------------

@dataclass
class RevINState:
    """Per-instance, per-channel statistics (shape ``(..., 1, c)``)."""

    mean: np.ndarray
    std: np.ndarray
    gamma: Optional[Tensor] = None
    beta: Optional[Tensor] = None
    eps: float = REVIN_EPS


def revin_normalize(x, gamma: Optional[Tensor] = None, beta: Optional[Tensor] = None,
                    eps: float = REVIN_EPS) -> tuple[Tensor, RevINState]:
    """Z-score each channel over the time axis of its own window.

    The statistics are treated as constants, as is the input itself.
    """
    data = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    if data.shape[-2] < 2:
        raise ValueError("revin needs at least two time steps")
    mean = data.mean(axis=-2, keepdims=True)
    std = np.maximum(data.std(axis=-2, keepdims=True), eps)
    z = Tensor((data - mean) / std)
    if gamma is not None:
        z = add(mul(z, gamma), beta)
    return z, RevINState(mean, std, gamma, beta, eps)


def revin_invert(y: Tensor, state: RevINState) -> Tensor:
    if y.shape[-1] != state.mean.shape[-1]:
        raise ValueError(f"revin_invert: expected {state.mean.shape[-1]} channels, got {y.shape[-1]}")
    if state.gamma is not None:
        # eps**2 keeps a zero gamma from dividing by zero
        y = div(sub(y, state.beta), add(state.gamma, state.eps * state.eps))
    return add(mul(y, Tensor(state.std)), Tensor(state.mean))


# -- positional encoding ----------------------------------------------------

def positional_encoding(n: int, c: int) -> np.ndarray:
    """Sinusoidal table: PE[p, 2k] = sin(p / 10000**(2k/c)), PE[p, 2k+1] = cos(same)."""
    if n < 1 or c < 1:
        raise ValueError("positional_encoding needs n, c >= 1")
    pos = np.arange(n, dtype=np.float64)[:, None]
    two_k = np.arange(0, c, 2, dtype=np.float64)
    angle = pos / np.power(10000.0, two_k / c)
    pe = np.zeros((n, c))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle[:, : c // 2])
    return pe
