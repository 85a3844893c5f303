import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mixforge import autodiff as ad
from mixforge import nn
from mixforge.autodiff.gradcheck import check_gradients

window = arrays(np.float64, (8, 3), elements=st.floats(-50, 50, allow_nan=False))


def test_splitmix_reference_values():
    # published first outputs of SplitMix64 seeded with 0
    g = nn.SplitMix64(0)
    assert [g.next_u64() for _ in range(3)] == [
        0xE220A8397B1DCDAF, 0x6E789E6AA1B965F4, 0x06C45D188009454F]


def test_uniform_matches_scalar_stream():
    a, b = nn.SplitMix64(42), nn.SplitMix64(42)
    vec = a.uniform(5)
    scalar = [(b.next_u64() >> 11) * 2.0 ** -53 for _ in range(5)]
    assert vec.tolist() == scalar
    assert a.state == b.state


def test_shuffle_is_a_permutation():
    out = nn.stream(7, "x").shuffle(list(range(50)))
    assert sorted(out) == list(range(50)) and out != list(range(50))


def test_linear_forward_examples():
    x = np.array([[1.0, 2.0]])
    assert np.array_equal(nn.linear_forward(x, np.eye(2), np.zeros(2)).data, x)
    W = np.array([[1.0, 0], [0, 1], [1, 1]])
    assert np.array_equal(nn.linear_forward(x, W, np.array([0.0, 0, 1])).data, [[1, 2, 4]])
    got = nn.linear_forward(np.zeros((3, 2)), np.ones((1, 2)), np.array([5.0])).data
    assert np.array_equal(got, np.full((3, 1), 5.0))


def test_ffn_forward_examples(rng):
    x = rng.normal(size=(4, 3))
    zero = nn.ffn_forward(x, np.zeros((5, 3)), np.zeros(5), np.zeros((3, 5)), np.zeros(3))
    assert not zero.data.any()
    scalar = nn.ffn_forward(np.array([[1.0]]), np.array([[2.0]]), np.zeros(1),
                            np.array([[1.0]]), np.zeros(1))
    assert abs(scalar.data[0, 0] - 1.9545) < 1e-4
    out = nn.ffn_forward(x, rng.normal(size=(6, 3)), rng.normal(size=6),
                         rng.normal(size=(3, 6)), rng.normal(size=3))
    assert out.shape == x.shape


def test_linear_and_ffn_gradients(rng):
    assert check_gradients(nn.linear_forward,
                           [rng.uniform(-2, 2, size=s) for s in [(4, 3), (2, 3), (2,)]]) < 1e-4
    assert check_gradients(nn.ffn_forward, [rng.uniform(-2, 2, size=s) for s in
                                            [(4, 3), (5, 3), (5,), (3, 5), (3,)]]) < 1e-4


@given(window)
def test_revin_normalized_moments(x):
    z, state = nn.revin_normalize(x)
    assert np.allclose(z.data.mean(axis=0), 0.0, atol=1e-9)
    live = x.std(axis=0) > nn.REVIN_EPS
    assert np.allclose(z.data.std(axis=0)[live], 1.0, atol=1e-6)


@given(window)
def test_revin_roundtrip(x):
    z, state = nn.revin_normalize(x)
    back = nn.revin_invert(z, state).data
    assert np.allclose(back, x, rtol=0, atol=1e-9)
    const = np.ptp(x, axis=0) == 0
    assert np.allclose(back[:, const], x.mean(axis=0)[const], rtol=0, atol=1e-9)


def test_revin_roundtrip_with_affine(rng):
    x = rng.normal(size=(2, 10, 3))
    z, state = nn.revin_normalize(x, ad.Tensor(rng.uniform(0.5, 2, 3)),
                                  ad.Tensor(rng.normal(size=3)))
    assert np.allclose(nn.revin_invert(z, state).data, x, atol=1e-9)


def test_revin_constant_channel_and_invert_examples():
    z, state = nn.revin_normalize(np.full((4, 1), 5.0))
    assert not z.data.any()
    x = np.array([[1.0, 10], [3, 20]])
    _, state = nn.revin_normalize(x)
    assert np.allclose(nn.revin_invert(ad.Tensor(np.zeros((3, 2))), state).data, [[2, 15]] * 3)
    st_ = nn.RevINState(mean=np.array([[10.0]]), std=np.array([[2.0]]))
    assert nn.revin_invert(ad.Tensor(np.array([[1.0]])), st_).data[0, 0] == 12.0


def test_revin_invert_channel_mismatch():
    _, state = nn.revin_normalize(np.random.default_rng(0).normal(size=(5, 3)))
    with pytest.raises(ValueError, match="expected 3 channels"):
        nn.revin_invert(ad.Tensor(np.zeros((2, 2))), state)


def test_positional_encoding_examples():
    pe = nn.positional_encoding(50, 6)
    assert np.all(pe[0, 0::2] == 0) and np.all(pe[0, 1::2] == 1)
    assert abs(pe[1, 0] - math.sin(1)) < 1e-6
    assert np.abs(pe).max() <= 1.0
    assert np.array_equal(pe, nn.positional_encoding(50, 6))
    assert nn.positional_encoding(4, 5).shape == (4, 5)


def test_init_parameters_examples():
    specs = [nn.ParamSpec("a.weight", (200, 100)), nn.ParamSpec("T", (5, 5), "identity")]
    p1, p2 = nn.init_parameters(specs, 9), nn.init_parameters(specs, 9)
    assert all(np.array_equal(p1[k].value, p2[k].value) for k in p1)
    assert np.array_equal(p1["T"].value, np.eye(5))
    w = p1["a.weight"].value
    bound = 1 / math.sqrt(100)
    assert np.abs(w).max() <= bound
    sigma = bound / math.sqrt(3)
    assert abs(w.mean()) < 3 * sigma / math.sqrt(w.size)
    other = nn.init_parameters(specs, 10)["a.weight"].value
    assert not np.array_equal(w, other)


def test_parameter_state_shapes_and_unique_names():
    p = nn.init_parameters(nn.linear_specs("l", 3, 2), 0)["l.weight"]
    assert p.value.shape == p.grad.shape == p.m.shape == p.v.shape == (2, 3)
    with pytest.raises(ValueError, match="duplicate"):
        nn.init_parameters([nn.ParamSpec("x", (1,))] * 2, 0)
    with pytest.raises(ValueError, match="unknown init"):
        nn.init_parameters([nn.ParamSpec("x", (1,), "normal")], 0)


def test_adding_a_parameter_keeps_the_others():
    a = nn.init_parameters([nn.ParamSpec("w1", (3, 3))], 5)
    b = nn.init_parameters([nn.ParamSpec("w0", (4, 4)), nn.ParamSpec("w1", (3, 3))], 5)
    assert np.array_equal(a["w1"].value, b["w1"].value)
