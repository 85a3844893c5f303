"""Finite-difference gate over every differentiable op and the full model."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .. import autodiff as ad
from .. import nn
from ..autodiff.gradcheck import check_gradients
from ..mixer import MixerConfig, model_forward, parameter_specs

THRESHOLD = 1e-4
TINY = dict(n=8, c=4, m_pred=4, s=2, r=2, d_temporal=16, d_ffn=16)


@dataclass
class Case:
    name: str
    fn: Callable
    shapes: list
    positive: tuple = ()  # input indices drawn from [0.5, 2] instead of [-2, 2]
    values: Callable | None = None  # overrides random draws


def _op_cases() -> list[Case]:
    return [
        Case("matmul", ad.matmul, [(3, 4), (4, 2)]),
        Case("matmul_batched", ad.matmul, [(2, 3, 4), (4, 5)]),
        Case("add", ad.add, [(2, 3, 4), (4,)]),
        Case("sub", ad.sub, [(3, 4), (3, 4)]),
        Case("mul", ad.mul, [(2, 3, 4), (1, 4)]),
        Case("div", ad.div, [(3, 4), (4,)], positive=(1,)),
        Case("scale", lambda x: ad.scale(x, -1.7), [(3, 4)]),
        Case("square", ad.square, [(3, 4)]),
        Case("transpose", ad.transpose, [(2, 3, 4)]),
        Case("sum", ad.sum, [(2, 3, 4)]),
        Case("mean", ad.mean, [(3, 4)]),
        Case("gelu", ad.gelu, [(3, 5)]),
        Case("softmax_rows", ad.softmax_rows, [(2, 3, 5)]),
        Case("slice_rows_strided", lambda x: ad.slice_rows_strided(x, 1, 3), [(2, 9, 2)]),
        Case("merge_rows_strided", lambda a, b, c: ad.merge_rows_strided([a, b, c]),
             [(2, 3, 2)] * 3),
        Case("slice_cols", lambda x: ad.slice_cols(x, 1, 3), [(3, 4)]),
        Case("concat_cols", lambda a, b: ad.concat_cols([a, b]), [(3, 2), (3, 3)]),
        Case("linear_forward", nn.linear_forward, [(5, 3), (4, 3), (4,)]),
        Case("ffn_forward", nn.ffn_forward, [(5, 3), (6, 3), (6,), (3, 6), (3,)]),
        Case("revin_affine", _revin_roundtrip, [(2,), (2,)], positive=(0,)),
    ]


_REVIN_X = np.random.default_rng(7).uniform(-2, 2, size=(6, 2))


def _revin_roundtrip(gamma, beta):
    z, state = nn.revin_normalize(_REVIN_X, gamma, beta)
    return nn.revin_invert(ad.gelu(z), state)


def _model_case(variant: str) -> Case:
    cfg = MixerConfig(variant=variant, **TINY)
    specs = parameter_specs(cfg)
    names = [s.name for s in specs]
    x = np.random.default_rng(11).uniform(-2, 2, size=(2, cfg.n, cfg.c))

    def fn(*tensors):
        return model_forward(cfg, dict(zip(names, tensors)), x)

    def values(rng):
        # init values plus jitter: realistic scales, no exactly-zero biases
        init = nn.init_parameters(specs, seed=3)
        return [init[name].value + rng.uniform(-0.1, 0.1, size=init[name].shape)
                for name in names]

    return Case(f"model_forward[{variant}]", fn, [s.shape for s in specs], values=values)


def cases() -> list[Case]:
    return _op_cases() + [_model_case(v) for v in ("mlp", "attention", "matrix")]


def _inputs(case: Case, rng: np.random.Generator) -> list[np.ndarray]:
    if case.values is not None:
        return case.values(rng)
    return [rng.uniform(0.5, 2, size=shape) if i in case.positive
            else rng.uniform(-2, 2, size=shape) for i, shape in enumerate(case.shapes)]


def run(seed: int = 0) -> list[tuple[str, float]]:
    rng = np.random.default_rng(seed)
    return [(case.name, check_gradients(case.fn, _inputs(case, rng), seed=seed))
            for case in cases()]


def main(out=print) -> int:
    start = time.monotonic()
    results = run()
    width = max(len(name) for name, _ in results)
    failed = 0
    for name, err in results:
        ok = err < THRESHOLD
        failed += not ok
        out(f"{name:<{width}}  max_rel_err={err:.3e}  {'ok' if ok else 'FAIL'}")
    out(f"gradcheck: {len(results) - failed}/{len(results)} passed "
        f"(threshold {THRESHOLD:g}, {time.monotonic() - start:.1f}s)")
    return 1 if failed else 0
