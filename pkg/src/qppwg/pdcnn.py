"""Kernel-3 dilated convolution with fixed or per-sample (pitch-dependent) dilation."""
from __future__ import annotations

from typing import Optional

import numpy as np

from . import tensor as T
from .conditioning import round_dilations
from .errors import ConfigurationError
from .tensor import Parameter, Tensor

FIXED = "fixed"
ADAPTIVE = "adaptive"


class PdcnnLayer:
    """Three 1x1 filters applied to the current, past and future taps.

    ``out_t = Wc x_t + Wp x_{t-d_t} + Wf x_{t+d_t} + b`` with zero padding.
    In fixed mode ``d_t`` is ``base_dilation``; in adaptive mode it is read
    from a per-sample dilation array handed to :meth:`forward`.
    """

    def __init__(self, in_channels: int, out_channels: int, base_dilation: int = 1,
                 mode: str = FIXED, *, name: str = "conv", rng=None, std: float = 0.02,
                 dtype=np.float32):
        if mode not in (FIXED, ADAPTIVE):
            raise ConfigurationError(f"unknown PDCNN mode {mode!r}")
        if base_dilation < 1:
            raise ConfigurationError(f"base dilation must be >= 1, got {base_dilation}")
        rng = np.random.default_rng(0) if rng is None else rng
        self.base_dilation = int(base_dilation)
        self.mode = mode
        shape = (out_channels, in_channels)
        self.w_current = Parameter(rng.normal(0.0, std, shape), f"{name}.w_current", dtype=dtype)
        self.w_past = Parameter(rng.normal(0.0, std, shape), f"{name}.w_past", dtype=dtype)
        self.w_future = Parameter(rng.normal(0.0, std, shape), f"{name}.w_future", dtype=dtype)
        self.bias = Parameter(np.zeros(out_channels), f"{name}.bias", dtype=dtype)

    @property
    def adaptive(self) -> bool:
        return self.mode == ADAPTIVE

    def parameters(self) -> list:
        return [self.w_current, self.w_past, self.w_future, self.bias]

    def forward(self, x: Tensor, dilations: Optional[np.ndarray] = None) -> Tensor:
        if self.adaptive:
            if dilations is None:
                raise ConfigurationError("adaptive PDCNN layer needs a per-sample dilation array")
            d = np.asarray(dilations, dtype=np.int64)
            if d.shape[-1] != x.shape[-1]:
                raise ConfigurationError(f"dilation length {d.shape[-1]} != input length {x.shape[-1]}")
            if np.any(d < 1):
                raise ConfigurationError("dilations must be >= 1")
        else:
            d = self.base_dilation if dilations is None else int(dilations)
            if d < 1:
                raise ConfigurationError(f"dilation must be >= 1, got {d}")
        out = T.conv1x1(x, self.w_current, self.bias)
        out = T.add(out, T.conv1x1(T.shift(x, -d), self.w_past))
        return T.add(out, T.conv1x1(T.shift(x, d), self.w_future))

    __call__ = forward

    def receptive_extent(self, e_t: float = 1.0) -> int:
        return layer_extent(self.mode, self.base_dilation, e_t)


def layer_extent(mode: str, base_dilation: int, e_t: float = 1.0) -> int:
    """Input samples a kernel-3 layer adds to a stack's receptive field (``2 * d'``)."""
    if mode == ADAPTIVE:
        return 2 * int(round_dilations(e_t, base_dilation))
    return 2 * int(base_dilation)


def receptive_extent(layer: PdcnnLayer, e_t: float = 1.0) -> int:
    return layer.receptive_extent(e_t)
