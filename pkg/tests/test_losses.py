import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qppwg import tensor as T
from qppwg.errors import ConfigurationError, UsageError
from qppwg.gradcheck import check_gradients
from qppwg.losses import (
    GanWeights,
    StftLossConfig,
    log_stft_magnitude,
    loss_adv,
    loss_d,
    loss_g,
    multi_res_stft,
    spectral_convergence,
    stft_loss_terms,
)

RES = (1024, 120, 600)


def noise(seed, length=4000, batch=1):
    return np.random.default_rng(seed).normal(0, 0.3, size=(batch, 1, length))


def test_identical_signals_have_zero_losses():
    x = noise(0)
    assert spectral_convergence(x, x, RES).item() == 0.0
    assert log_stft_magnitude(x, x, RES).item() == 0.0


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10 ** 6), st.floats(0.05, 20.0))
def test_scaling_identities(seed, gain):
    # |X_hat| = g |X| => L_sc = |1 - g| and L_m = |ln g|
    x = noise(seed, 2000)
    assert spectral_convergence(x, gain * x, RES).item() == pytest.approx(abs(1 - gain), rel=1e-5, abs=1e-7)
    assert log_stft_magnitude(x, gain * x, RES).item() == pytest.approx(abs(np.log(gain)), rel=1e-4, abs=1e-7)


def test_spectral_convergence_matches_numpy_oracle():
    rng = np.random.default_rng(2)
    x, y = rng.normal(size=3000), rng.normal(size=3000)
    fft, hop, win = RES
    w = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(win) / win)

    def mag(s):
        frames = np.stack([s[i * hop:i * hop + win] * w for i in range(1 + (len(s) - win) // hop)])
        return np.abs(np.fft.rfft(frames, n=fft, axis=1))

    mx, my = mag(x), mag(y)
    expected_sc = np.linalg.norm(mx - my) / np.linalg.norm(mx)
    expected_m = np.mean(np.abs(np.log(np.maximum(mx, 1e-7)) - np.log(np.maximum(my, 1e-7))))
    assert spectral_convergence(x[None], y[None], RES).item() == pytest.approx(expected_sc, rel=1e-10)
    assert log_stft_magnitude(x[None], y[None], RES).item() == pytest.approx(expected_m, rel=1e-10)


def test_multi_resolution_sum():
    x, y = noise(3), noise(4)
    l_sc, l_m = stft_loss_terms(x, y)
    parts = [spectral_convergence(x, y, r).item() + log_stft_magnitude(x, y, r).item()
             for r in StftLossConfig().resolutions]
    assert multi_res_stft(x, y).item() == pytest.approx(sum(parts), rel=1e-12)
    assert l_sc.item() + l_m.item() == pytest.approx(sum(parts), rel=1e-12)


def test_silent_reference_is_finite():
    x = np.zeros((1, 1, 2000))
    assert np.isfinite(multi_res_stft(x, noise(5, 2000)).item())


def test_stft_loss_gradient_small_resolution():
    rng = np.random.default_rng(6)
    x = T.Tensor(rng.normal(size=(1, 1, 80)))
    y = T.Tensor(rng.normal(size=(1, 1, 80)), requires_grad=True)
    cfg = StftLossConfig([(32, 8, 24)])
    assert check_gradients(lambda: multi_res_stft(x, y, cfg), [y]) < 1e-4


def test_lsgan_losses():
    ones, zeros = T.Tensor(np.ones((2, 1, 10))), T.Tensor(np.zeros((2, 1, 10)))
    assert loss_d(ones, zeros).item() == 0.0
    assert loss_d(zeros, ones).item() == 2.0
    assert loss_adv(ones).item() == 0.0
    assert loss_adv(zeros).item() == 1.0
    half = T.Tensor(np.full((1, 1, 4), 0.5))
    assert loss_d(half, half).item() == pytest.approx(0.5)


def test_lsgan_losses_average_over_batch_and_time():
    d = np.zeros((3, 1, 7))
    d[0, 0, 0] = 1.0
    assert loss_adv(T.Tensor(d)).item() == pytest.approx(20 / 21)


def test_generator_objective_weighting():
    l_sp, l_adv = T.Tensor(np.array(2.0)), T.Tensor(np.array(0.5))
    assert loss_g(l_sp, l_adv).item() == 4.0
    assert loss_g(l_sp, l_adv, adversarial_enabled=False).item() == 2.0
    assert loss_g(l_sp, l_adv, 0.0).item() == 2.0
    with pytest.raises(ConfigurationError):
        GanWeights(-1.0)


def test_config_and_shape_validation():
    with pytest.raises(ConfigurationError):
        StftLossConfig([(256, 64, 512)])
    with pytest.raises(UsageError):
        spectral_convergence(noise(0, 2000), noise(0, 1999), RES)
