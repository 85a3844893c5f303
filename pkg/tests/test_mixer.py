import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mixforge import autodiff as ad
from mixforge.linalg import jacobi_svd, svd_denoise
from mixforge.mixer import (
    ConfigError,
    MixerConfig,
    MixerModel,
    attention,
    channel_drop,
    channel_mix,
    downsample,
    least_prime_factor,
    matrix_forward,
    merge,
    model_forward,
    param_count,
    parameter_specs,
    temporal_mix,
)

S_GRID = (1, 2, 3, 4, 6, 8, 12)


def zero_weights(cfg):
    return {s.name: ad.Tensor(np.zeros(s.shape)) for s in parameter_specs(cfg)}


def model_weights(cfg, seed=0):
    return MixerModel(cfg, seed=seed).weights()


# -- config -----------------------------------------------------------------

def test_config_rejects_non_divisor():
    with pytest.raises(ConfigError, match="s must divide the input horizon n"):
        MixerConfig(n=96, s=5).validate()


@pytest.mark.parametrize("bad", [dict(n=1), dict(m_pred=0), dict(r=-1), dict(variant="cnn"),
                                 dict(c=0), dict(channel_mode="svd", variant="attention")])
def test_config_rejects_invalid(bad):
    with pytest.raises(ConfigError):
        MixerConfig(**bad).validate()


def test_least_prime_factor_examples():
    assert least_prime_factor(8) == 2
    assert least_prime_factor(7) == 7
    assert least_prime_factor(321) == 3
    assert MixerConfig(c=7).heads == 7 and MixerConfig(c=321).heads == 3


@given(st.integers(2, 5000))
def test_least_prime_factor_is_smallest_prime_divisor(c):
    p = least_prime_factor(c)
    assert c % p == 0
    assert all(p % d for d in range(2, int(math.isqrt(p)) + 1))
    assert all(c % d for d in range(2, p))


# -- temporal factorization -------------------------------------------------

def test_downsample_and_merge_examples():
    x = np.array([[1.0], [2], [3], [4]])
    a, b = downsample(x, 2)
    assert np.array_equal(a.data, [[1], [3]]) and np.array_equal(b.data, [[2], [4]])
    assert np.array_equal(merge([a, b]).data, x)
    (only,) = downsample(x, 1)
    assert np.array_equal(only.data, x)
    assert np.array_equal(merge([only]).data, x)
    rows = downsample(x, 4)
    assert len(rows) == 4 and all(r.shape == (1, 1) for r in rows)


@given(st.sampled_from(S_GRID), arrays(np.float64, (96, 2),
                                       elements=st.floats(-1e6, 1e6, allow_nan=False)))
def test_merge_downsample_roundtrip_bit_exact(s, x):
    assert np.array_equal(merge(downsample(x, s)).data, x)


def test_temporal_mix_zero_mlp():
    cfg = MixerConfig(n=8, c=3, m_pred=4, d_temporal=5)
    x = np.random.default_rng(0).normal(size=(8, 3))
    assert not temporal_mix(zero_weights(cfg), cfg, ad.Tensor(x)).data.any()


def test_temporal_mix_matrix_identity():
    cfg = MixerConfig(variant="matrix", n=8, c=3, m_pred=8, matrix_init="identity")
    x = np.random.default_rng(0).normal(size=(8, 3))
    w = MixerModel(cfg).weights()
    assert np.array_equal(temporal_mix(w, cfg, ad.Tensor(x)).data, x)


@pytest.mark.parametrize("s", [2, 4])
def test_factorized_mlp_has_no_cross_subsequence_leakage(s):
    cfg = MixerConfig(n=8, c=3, m_pred=4, s=s, d_temporal=6)
    w = model_weights(cfg, seed=2)
    x = np.random.default_rng(1).normal(size=(8, 3))
    out = temporal_mix(w, cfg, ad.Tensor(x)).data
    single = MixerConfig(n=8 // s, c=3, m_pred=4, d_temporal=6)
    for i in range(s):
        wi = {k.replace(f"block0.temporal{i}.", "block0.temporal."): v for k, v in w.items()}
        expected = temporal_mix(wi, single, ad.Tensor(x[i::s])).data
        assert np.array_equal(out[i::s], expected)


# -- attention --------------------------------------------------------------

def _attn_weights(c, rng, bias=True):
    w = {}
    for proj in "qkvo":
        w[f"a.{proj}.weight"] = ad.Tensor(rng.normal(size=(c, c)))
        if proj != "k" and bias:
            w[f"a.{proj}.bias"] = ad.Tensor(rng.normal(size=c))
    return w


def test_attention_single_position_is_value_projection(rng):
    w = _attn_weights(3, rng)
    x = rng.normal(size=(1, 3))
    v = x @ w["a.v.weight"].data.T + w["a.v.bias"].data
    expected = v @ w["a.o.weight"].data.T + w["a.o.bias"].data
    assert np.allclose(attention(w, "a", ad.Tensor(x), 3).data, expected, atol=1e-12)


def test_attention_uniform_keys_average_values(rng):
    w = _attn_weights(2, rng)
    w["a.k.weight"] = ad.Tensor(np.zeros((2, 2)))
    w["a.o.weight"] = ad.Tensor(np.eye(2))
    w["a.o.bias"] = ad.Tensor(np.zeros(2))
    x = rng.normal(size=(5, 2))
    v = x @ w["a.v.weight"].data.T + w["a.v.bias"].data
    out = attention(w, "a", ad.Tensor(x), 1).data
    assert np.allclose(out, np.tile(v.mean(axis=0), (5, 1)), atol=1e-12)


def test_attention_two_by_two_hand_oracle():
    # c=2 gives two heads of width 1; projections chosen by hand
    x = [[1.0, 2.0], [0.5, -1.0]]
    Wq, Wk, Wv, Wo = [[1, 0], [0, 2]], [[0.5, 0], [1, 1]], [[1, 1], [0, -1]], [[1, 0], [1, 1]]
    bq, bv, bo = [0.1, 0.0], [0.0, 0.2], [0.0, -0.3]
    w = {"a.q.weight": Wq, "a.q.bias": bq, "a.k.weight": Wk, "a.v.weight": Wv, "a.v.bias": bv,
         "a.o.weight": Wo, "a.o.bias": bo}
    w = {k: ad.Tensor(np.array(v, dtype=float)) for k, v in w.items()}

    def proj(W, b, row):
        return [sum(W[i][j] * row[j] for j in range(2)) + (b[i] if b else 0.0) for i in range(2)]

    q = [proj(Wq, bq, r) for r in x]
    k = [proj(Wk, None, r) for r in x]
    v = [proj(Wv, bv, r) for r in x]
    heads = [[0.0, 0.0], [0.0, 0.0]]
    for h in range(2):
        for t in range(2):
            scores = [q[t][h] * k[u][h] for u in range(2)]  # scale 1/sqrt(1)
            mx = max(scores)
            e = [math.exp(s_ - mx) for s_ in scores]
            heads[t][h] = sum(e[u] / sum(e) * v[u][h] for u in range(2))
    expected = [proj(Wo, bo, heads[t]) for t in range(2)]
    got = attention(w, "a", ad.Tensor(np.array(x)), 2).data
    assert np.allclose(got, expected, atol=1e-12)


# -- channel mixing ---------------------------------------------------------

def test_channel_mix_examples(rng):
    x = rng.normal(size=(4, 3))
    z = channel_mix(ad.Tensor(x), *(ad.Tensor(np.zeros(s)) for s in [(2, 3), (2,), (3, 2), (3,)]))
    assert not z.data.any()
    out = channel_mix(ad.Tensor(np.array([[2.0, 9.0]])), ad.Tensor(np.array([[1.0, 0.0]])),
                      ad.Tensor(np.zeros(1)), ad.Tensor(np.array([[1.0], [0.0]])),
                      ad.Tensor(np.zeros(2))).data
    assert abs(out[0, 0] - 1.9545) < 1e-4 and out[0, 1] == 0.0


@given(st.integers(1, 3), st.integers(0, 2**31))
def test_channel_mix_output_rank_at_most_r(r, seed):
    g = np.random.default_rng(seed)
    c = 6
    out = channel_mix(ad.Tensor(g.normal(size=(20, c))), ad.Tensor(g.normal(size=(r, c))),
                      ad.Tensor(g.normal(size=r)), ad.Tensor(g.normal(size=(c, r))),
                      ad.Tensor(np.zeros(c))).data
    s = np.linalg.svd(out, compute_uv=False)
    assert np.sum(s > 1e-8 * max(s[0], 1.0)) <= r


def test_channel_drop_examples(rng):
    x = rng.normal(size=(5, 2))
    assert np.array_equal(channel_drop(x, 0.0, 3), x)
    out = channel_drop(x, 0.5, 3)
    zero_cols = [j for j in range(2) if not out[:, j].any()]
    assert len(zero_cols) == 1
    kept = 1 - zero_cols[0]
    assert np.array_equal(out[:, kept], x[:, kept])
    assert np.array_equal(channel_drop(x, 0.5, 3), out)


@given(st.integers(1, 40), st.floats(0, 0.99), st.integers(0, 1000))
def test_channel_drop_count(c, fraction, seed):
    out = channel_drop(np.ones((3, c)), fraction, seed)
    assert int((out.sum(axis=0) == 0).sum()) == math.floor(fraction * c)


# -- SVD --------------------------------------------------------------------

@given(st.integers(1, 7), st.integers(1, 5), st.integers(0, 2**31))
def test_jacobi_svd_matches_numpy(rows, cols, seed):
    x = np.random.default_rng(seed).normal(size=(rows, cols))
    s, v = jacobi_svd(x)
    ref = np.linalg.svd(x, compute_uv=False)
    assert np.allclose(s[:len(ref)], ref, atol=1e-10)
    assert np.allclose(s[len(ref):], 0, atol=1e-10)
    assert np.allclose(v.T @ v, np.eye(cols), atol=1e-10)


def test_jacobi_svd_batched_equals_per_item(rng):
    xs = rng.normal(size=(3, 6, 4))
    s, v = jacobi_svd(xs)
    for i in range(3):
        assert np.allclose(s[i], np.linalg.svd(xs[i], compute_uv=False), atol=1e-10)


def test_svd_denoise_examples(rng):
    u, w = rng.normal(size=(6, 1)), rng.normal(size=(1, 4))
    rank1 = u @ w
    assert np.allclose(svd_denoise(rank1, 0.1), rank1, atol=1e-9)
    assert np.array_equal(svd_denoise(np.diag([10.0, 0.5]), 0.1), np.diag([10.0, 0.0]))
    x = rng.normal(size=(5, 4))
    assert np.allclose(svd_denoise(x, 1e-12), x, atol=1e-8)


# -- full model -------------------------------------------------------------

def test_matrix_identity_model_reproduces_input(rng):
    cfg = MixerConfig(variant="matrix", n=6, m_pred=6, c=3, revin=False, matrix_init="identity")
    x = rng.normal(size=(6, 3))
    assert np.array_equal(MixerModel(cfg).predict(x), x)


def test_matrix_forward_examples(rng):
    cfg = MixerConfig(variant="matrix", n=5, m_pred=3, c=3)
    x = rng.normal(size=(5, 3))
    sel = np.eye(3, 5)
    assert np.array_equal(matrix_forward(x, np.eye(5), np.eye(3), sel, cfg).data, x[:3])
    cube = MixerConfig(variant="matrix", n=3, m_pred=3, c=3)
    T, C, F, X = (rng.normal(size=(3, 3)) for _ in range(4))
    got = matrix_forward(X, T, C, F, cube).data
    oracle = np.zeros((3, 3))
    for i in range(3):
        for j in range(3):
            oracle[i, j] = sum(F[i, a] * T[a, b] * X[b, d] * C[d, j]
                               for a in range(3) for b in range(3) for d in range(3))
    assert np.allclose(got, oracle, atol=1e-12)


@pytest.mark.parametrize("variant", ["mlp", "attention", "matrix", "linear"])
def test_zero_parameters_with_revin_predict_window_mean(variant, rng):
    cfg = MixerConfig(variant=variant, n=12, m_pred=5, c=4, s=2, r=2, d_temporal=6, d_ffn=6)
    x = rng.normal(size=(3, 12, 4)) * 3 + 1
    out = model_forward(cfg, zero_weights(cfg), x).data
    expected = np.repeat(x.mean(axis=1, keepdims=True), 5, axis=1)
    assert np.allclose(out, expected, atol=1e-12)


@pytest.mark.parametrize("variant", ["mlp", "attention", "matrix"])
@pytest.mark.parametrize("extra", [dict(), dict(s=2, r=2, pos_encoding=True),
                                   dict(shared_temporal=True, s=4, revin=False)])
def test_model_output_shape_and_finite(variant, extra, rng):
    cfg = MixerConfig(variant=variant, n=8, m_pred=3, c=4, d_temporal=5, d_ffn=5, **extra)
    out = MixerModel(cfg, seed=1).predict(rng.normal(size=(2, 8, 4)))
    assert out.shape == (2, 3, 4) and np.isfinite(out).all()


def test_svd_and_drop_channel_modes(rng):
    x = rng.normal(size=(2, 8, 4))
    for mode in ("svd", "drop"):
        cfg = MixerConfig(n=8, m_pred=3, c=4, channel_mode=mode, d_temporal=5)
        model = MixerModel(cfg, seed=1)
        assert "block0.channel.fc1.weight" not in model.params
        out = model.predict(x)
        assert out.shape == (2, 3, 4) and np.isfinite(out).all()
    # drop only acts while training; at inference the channel stage passes its input through
    cfg = MixerConfig(n=8, m_pred=3, c=4, channel_mode="drop", drop_fraction=0.5, d_temporal=5)
    model = MixerModel(cfg, seed=1)
    w = model.weights()
    keep_all = MixerConfig(n=8, m_pred=3, c=4, channel_mode="drop", drop_fraction=0.0,
                           d_temporal=5)
    assert np.array_equal(model.predict(x), model_forward(keep_all, w, x, training=True).data)
    assert not np.array_equal(model.predict(x), model_forward(cfg, w, x, training=True).data)


def test_model_rejects_wrong_window_shape():
    model = MixerModel(MixerConfig(n=8, m_pred=3, c=4, d_temporal=5))
    with pytest.raises(ConfigError, match="does not match"):
        model.predict(np.zeros((8, 5)))


# -- parameter counts -------------------------------------------------------

def test_param_count_linear_layer():
    cfg = MixerConfig(variant="linear", n=10, m_pred=4, c=3, revin=False)
    total, parts = param_count(cfg)
    assert total == 4 * 10 + 4 and parts == {"final_linear": 44}


def _extractor_total(cfg):
    _, parts = param_count(cfg)
    return sum(v for k, v in parts.items() if ".temporal" in k)


def test_param_count_shared_vs_unshared_formula():
    n, d, blocks, s = 96, 32, 2, 8
    kw = dict(n=n, m_pred=24, c=7, d_temporal=d, s=s, blocks=blocks)
    shared, unshared = MixerConfig(shared_temporal=True, **kw), MixerConfig(**kw)
    L = n // s
    per = 2 * L * d + d + L
    assert _extractor_total(shared) == blocks * per
    assert _extractor_total(unshared) == blocks * s * per == 8 * _extractor_total(shared)
    assert param_count(unshared)[0] > param_count(shared)[0]
    # non-extractor parameters are the same
    assert (param_count(unshared)[0] - _extractor_total(unshared)
            == param_count(shared)[0] - _extractor_total(shared))


def test_param_count_channel_stage():
    base = dict(n=16, m_pred=8, c=7, d_temporal=8)
    _, parts = param_count(MixerConfig(r=0, **base))
    assert not any(".channel" in k for k in parts)
    _, parts = param_count(MixerConfig(r=2, **base))
    assert sum(v for k, v in parts.items() if ".channel" in k) == 2 * (2 * 7 * 2 + 2 + 7)


def test_model_params_match_spec_count():
    cfg = MixerConfig(variant="attention", n=8, m_pred=4, c=4, s=2, r=2)
    model = MixerModel(cfg)
    assert param_count(model) == param_count(cfg)
    assert len(set(model.params)) == len(model.params)
