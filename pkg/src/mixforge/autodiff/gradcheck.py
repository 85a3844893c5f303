"""Central finite-difference checks for tape gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .ops import mul, sum
from .tensor import Tape, Tensor, backward

H = 1e-5
DENOM_FLOOR = 1e-8


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Worst elementwise |a - n| / max(|a|, |n|, 1e-8)."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), DENOM_FLOOR)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def check_gradients(fn: Callable[..., Tensor], inputs: Sequence[np.ndarray],
                    seed: int = 0, h: float = H) -> float:
    """Max relative error between tape and finite-difference gradients.

    The scalar probed is ``sum(fn(*inputs) * R)`` with a fixed random ``R``,
    so every output element contributes with a distinct weight.
    """
    inputs = [np.array(x, dtype=np.float64) for x in inputs]
    probe = fn(*[Tensor(x) for x in inputs]).data
    weights = np.random.default_rng(seed).uniform(0.5, 1.5, size=probe.shape)

    def scalar(xs) -> float:
        return float((fn(*[Tensor(x) for x in xs]).data * weights).sum())

    tape = Tape()
    leaves = [tape.watch(x) for x in inputs]
    loss = sum(mul(fn(*leaves), Tensor(weights)))
    grads = backward(tape, loss)

    worst = 0.0
    for k, x in enumerate(inputs):
        numeric = np.zeros_like(x)
        flat = x.reshape(-1)
        nflat = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = scalar(inputs)
            flat[i] = orig - h
            down = scalar(inputs)
            flat[i] = orig
            nflat[i] = (up - down) / (2 * h)
        worst = max(worst, relative_error(grads[leaves[k].node].data, numeric))
    return worst
