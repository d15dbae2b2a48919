import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import dyadic, f0_contour, pdcnn_loop, torch_dilated_conv
from qppwg import tensor as T
from qppwg.conditioning import DilationSchedule
from qppwg.errors import ConfigurationError
from qppwg.gradcheck import check_gradients
from qppwg.pdcnn import ADAPTIVE, FIXED, PdcnnLayer, layer_extent


def layer64(cin, cout, d, mode, seed):
    layer = PdcnnLayer(cin, cout, d, mode, rng=np.random.default_rng(seed), dtype=np.float64)
    rng = np.random.default_rng(seed + 1)
    for p in layer.parameters():
        p.data = dyadic(rng, p.shape)
    return layer


def weights(layer):
    return layer.w_current.data, layer.w_past.data, layer.w_future.data, layer.bias.data


@pytest.mark.parametrize("case", range(10))
def test_adaptive_forward_equals_loop_oracle(case):
    rng = np.random.default_rng(case)
    L = int(rng.integers(2, 65))
    base = int(rng.choice([1, 2, 4, 8]))
    layer = layer64(3, 2, base, ADAPTIVE, case)
    sched = DilationSchedule.from_f0(f0_contour(rng, L), 22050, 4.0, [base])
    x = dyadic(rng, (2, 3, L))
    out = layer(T.Tensor(x), sched.for_layer(0)).data
    np.testing.assert_array_equal(out, pdcnn_loop(x, *weights(layer), sched.for_layer(0)))


@pytest.mark.parametrize("d", [1, 2, 4, 16])
def test_fixed_forward_equals_torch_dilated_conv(d):
    rng = np.random.default_rng(d)
    layer = layer64(4, 3, d, FIXED, d)
    x = dyadic(rng, (2, 4, 40))
    np.testing.assert_array_equal(layer(T.Tensor(x)).data, torch_dilated_conv(x, *weights(layer), d))


def test_constant_adaptive_dilation_equals_fixed_layer():
    rng = np.random.default_rng(3)
    fixed = layer64(2, 2, 4, FIXED, 7)
    adaptive = layer64(2, 2, 4, ADAPTIVE, 7)
    x = T.Tensor(rng.normal(size=(1, 2, 30)))
    np.testing.assert_array_equal(fixed(x).data, adaptive(x, np.full(30, 4)).data)


def test_dilation_beyond_length_sees_only_current_tap():
    layer = layer64(1, 1, 1, ADAPTIVE, 0)
    x = np.arange(1.0, 6.0).reshape(1, 1, 5)
    out = layer(T.Tensor(x), np.full(5, 10)).data
    np.testing.assert_array_equal(out, layer.w_current.data[0, 0] * x + layer.bias.data[0])


def test_adaptive_layer_gradients():
    rng = np.random.default_rng(4)
    layer = PdcnnLayer(2, 3, 2, ADAPTIVE, rng=rng, std=0.5, dtype=np.float64)
    x = T.Tensor(rng.normal(size=(2, 2, 12)), requires_grad=True)
    dil = rng.integers(1, 6, size=(2, 12))
    probe = T.Tensor(rng.normal(size=(2, 3, 12)))
    err = check_gradients(lambda: T.sum(T.mul(layer(x, dil), probe)), [x] + layer.parameters())
    assert err < 1e-4


def test_adaptive_layer_requires_matching_schedule():
    layer = PdcnnLayer(1, 1, 1, ADAPTIVE)
    x = T.Tensor(np.zeros((1, 1, 4), dtype=np.float32))
    with pytest.raises(ConfigurationError):
        layer(x)
    with pytest.raises(ConfigurationError):
        layer(x, np.ones(3, dtype=int))
    with pytest.raises(ConfigurationError):
        layer(x, np.zeros(4, dtype=int))


def test_invalid_layer_construction():
    with pytest.raises(ConfigurationError):
        PdcnnLayer(1, 1, 0)
    with pytest.raises(ConfigurationError):
        PdcnnLayer(1, 1, 1, "sometimes")


def test_layer_extent():
    assert layer_extent(FIXED, 512) == 1024
    assert layer_extent(ADAPTIVE, 2, 110.25) == 2 * 221
    assert layer_extent(ADAPTIVE, 1, 0.2) == 2


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 40), st.integers(0, 10 ** 6))
def test_output_length_matches_input(length, seed):
    rng = np.random.default_rng(seed)
    layer = PdcnnLayer(2, 3, 2, ADAPTIVE, rng=rng)
    x = T.Tensor(rng.normal(size=(1, 2, length)).astype(np.float32))
    assert layer(x, rng.integers(1, 50, size=length)).shape == (1, 3, length)
