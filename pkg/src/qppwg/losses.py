"""Least-squares GAN losses and the multi-resolution STFT loss."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from . import tensor as T
from .errors import ConfigurationError, UsageError
from .tensor import Tensor

LOG_FLOOR = 1e-7
DEFAULT_RESOLUTIONS = ((1024, 120, 600), (2048, 240, 1200), (512, 50, 240))


@dataclass
class StftLossConfig:
    resolutions: list = field(default_factory=lambda: [tuple(r) for r in DEFAULT_RESOLUTIONS])

    def __post_init__(self):
        self.resolutions = [tuple(int(v) for v in r) for r in self.resolutions]
        for fft, hop, win in self.resolutions:
            if win > fft or hop < 1:
                raise ConfigurationError(f"invalid STFT resolution fft={fft} hop={hop} win={win}")


@dataclass
class GanWeights:
    lambda_adv: float = 4.0

    def __post_init__(self):
        if not self.lambda_adv > 0:
            raise ConfigurationError(f"lambda_adv must be positive, got {self.lambda_adv}")


def _flat(x: Tensor) -> Tensor:
    # [B, 1, T] waveforms -> [B, T]
    if x.data.ndim == 3:
        if x.shape[1] != 1:
            raise UsageError(f"waveform must have one channel, got {x.shape}")
        return T.reshape(x, (x.shape[0], x.shape[2]))
    if x.data.ndim == 1:
        return T.reshape(x, (1, x.shape[0]))
    return x


def _magnitudes(x: Tensor, x_hat: Tensor, res):
    x, x_hat = _flat(T.as_tensor(x)), _flat(T.as_tensor(x_hat))
    if x.shape != x_hat.shape:
        raise UsageError(f"reference {x.shape} and generated {x_hat.shape} lengths differ")
    fft, hop, win = res
    return T.stft_magnitude(x, fft, hop, win), T.stft_magnitude(x_hat, fft, hop, win)


def spectral_convergence(x, x_hat, res) -> Tensor:
    """``|| |X| - |X_hat| ||_F / || |X| ||_F`` for reference ``x`` and generated ``x_hat``."""
    mag, mag_hat = _magnitudes(x, x_hat, res)
    return _sc(mag, mag_hat)


def log_stft_magnitude(x, x_hat, res) -> Tensor:
    """Mean absolute difference of floored log magnitudes."""
    mag, mag_hat = _magnitudes(x, x_hat, res)
    return _log_mag(mag, mag_hat)


def _sc(mag: Tensor, mag_hat: Tensor) -> Tensor:
    return T.divide(T.frobenius_norm(T.sub(mag, mag_hat)), T.frobenius_norm(mag))


def _log_mag(mag: Tensor, mag_hat: Tensor) -> Tensor:
    diff = T.sub(T.log_clamped(mag, LOG_FLOOR), T.log_clamped(mag_hat, LOG_FLOOR))
    return T.scale(T.l1_norm(diff), 1.0 / diff.size)


def stft_loss_terms(x, x_hat, cfg: Optional[StftLossConfig] = None):
    """Summed spectral-convergence and log-magnitude terms over all resolutions."""
    cfg = cfg or StftLossConfig()
    l_sc = l_m = None
    for res in cfg.resolutions:
        mag, mag_hat = _magnitudes(x, x_hat, res)
        sc, lm = _sc(mag, mag_hat), _log_mag(mag, mag_hat)
        l_sc = sc if l_sc is None else T.add(l_sc, sc)
        l_m = lm if l_m is None else T.add(l_m, lm)
    return l_sc, l_m


def multi_res_stft(x, x_hat, cfg: Optional[StftLossConfig] = None) -> Tensor:
    """Sum over resolutions of ``L_sc + L_m``."""
    l_sc, l_m = stft_loss_terms(x, x_hat, cfg)
    return T.add(l_sc, l_m)


def loss_d(d_real: Tensor, d_fake: Tensor) -> Tensor:
    """Discriminator loss ``E[(1 - D(x))^2] + E[D(G(z))^2]``, means over batch and time."""
    real_err = T.add_scalar(T.scale(d_real, -1.0), 1.0)
    return T.add(T.mean(T.mul(real_err, real_err)), T.mean(T.mul(d_fake, d_fake)))


def loss_adv(d_fake: Tensor) -> Tensor:
    err = T.add_scalar(T.scale(d_fake, -1.0), 1.0)
    return T.mean(T.mul(err, err))


def loss_g(l_sp: Tensor, l_adv: Optional[Tensor], weights=None,
           adversarial_enabled: bool = True) -> Tensor:
    """``l_sp + lambda_adv * l_adv``; ``l_sp`` alone while adversarial training is off.

    ``weights`` is a :class:`GanWeights` or a bare float (0 allowed for ablations).
    """
    if not adversarial_enabled or l_adv is None:
        return l_sp
    lam = (weights or GanWeights()).lambda_adv if not isinstance(weights, (int, float)) else float(weights)
    return T.add(l_sp, T.scale(l_adv, lam))
