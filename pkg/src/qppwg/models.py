"""QPPWG / PWG generators and the PWG discriminator."""
from __future__ import annotations

import re
from dataclasses import asdict, dataclass, fields
from typing import Optional

import numpy as np

from . import tensor as T
from .conditioning import AUX_CHANNELS, DEFAULT_DENSE_FACTOR, DilationSchedule
from .errors import ConfigurationError, UsageError
from .pdcnn import ADAPTIVE, FIXED, PdcnnLayer, layer_extent
from .tensor import Parameter, Tensor

_SPEC_RE = re.compile(r"^(?:B_?)?([AF])(\d+)C(\d+)$")


@dataclass(frozen=True)
class MacroblockSpec:
    """``blocks`` residual blocks of one kind, dilations cycling ``cycles`` times."""

    kind: str
    blocks: int
    cycles: int

    def __post_init__(self):
        if self.kind not in (FIXED, ADAPTIVE):
            raise ConfigurationError(f"macroblock kind must be fixed/adaptive, got {self.kind!r}")
        if self.blocks < 1 or self.cycles < 1 or self.blocks % self.cycles:
            raise ConfigurationError(
                f"{self.blocks} blocks cannot be split into {self.cycles} equal dilation cycles")

    @classmethod
    def parse(cls, text: str) -> "MacroblockSpec":
        """Parse the ``B_A10C2`` / ``F30C3`` notation."""
        m = _SPEC_RE.match(text.strip())
        if not m:
            raise ConfigurationError(f"cannot parse macroblock spec {text!r}")
        kind = ADAPTIVE if m.group(1) == "A" else FIXED
        return cls(kind, int(m.group(2)), int(m.group(3)))

    @property
    def label(self) -> str:
        return f"B_{'A' if self.kind == ADAPTIVE else 'F'}{self.blocks}C{self.cycles}"

    def dilations(self) -> list:
        per_cycle = self.blocks // self.cycles
        return [2 ** (i % per_cycle) for i in range(self.blocks)]


@dataclass
class GeneratorConfig:
    macroblocks: list
    residual_channels: int = 64
    gate_channels: int = 128
    skip_channels: int = 64
    aux_channels: int = AUX_CHANNELS
    kernel: int = 3
    dense_factor: float = DEFAULT_DENSE_FACTOR
    scale_residual: bool = True
    init_std: float = 0.02
    name: str = "custom"

    def __post_init__(self):
        self.macroblocks = [m if isinstance(m, MacroblockSpec) else
                            MacroblockSpec.parse(m) if isinstance(m, str) else MacroblockSpec(**m)
                            for m in self.macroblocks]
        if not self.macroblocks:
            raise ConfigurationError("generator needs at least one macroblock")
        if self.kernel != 3:
            raise ConfigurationError("only kernel size 3 is supported")
        if self.gate_channels % 2:
            raise ConfigurationError("gate_channels must be even (split into tanh/sigmoid halves)")

    @property
    def total_blocks(self) -> int:
        return sum(m.blocks for m in self.macroblocks)

    def block_layout(self) -> list:
        """``(kind, base_dilation)`` for every residual block in order."""
        return [(m.kind, d) for m in self.macroblocks for d in m.dilations()]

    def adaptive_dilations(self) -> list:
        return [d for kind, d in self.block_layout() if kind == ADAPTIVE]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["macroblocks"] = [m.label for m in self.macroblocks]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigurationError(f"unknown generator config keys: {sorted(unknown)}")
        return cls(**d)


PRESETS = {
    "PWG_30": ["B_F30C3"],
    "PWG_20": ["B_F20C2"],
    "QPPWG_af": ["B_A10C2", "B_F10C1"],
    "QPPWG_fa": ["B_F10C1", "B_A10C2"],
}


def preset(name: str, **overrides) -> GeneratorConfig:
    """Named generator configs; ``desk`` is the small QPPWG used for laptop-scale training."""
    if name == "desk":
        base = dict(macroblocks=["B_A4C2", "B_F4C1"], residual_channels=16,
                    gate_channels=32, skip_channels=16)
    elif name in PRESETS:
        base = dict(macroblocks=list(PRESETS[name]))
    else:
        raise UsageError(f"unknown preset {name!r}; choose from {sorted(PRESETS) + ['desk']}")
    base.update(name=name)
    base.update(overrides)
    return GeneratorConfig(**base)


class Module:
    """Shared parameter bookkeeping."""

    def named_parameters(self) -> list:
        raise NotImplementedError

    def parameters(self) -> list:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict) -> None:
        params = dict(self.named_parameters())
        if set(params) != set(state):
            missing = sorted(set(params) - set(state))
            extra = sorted(set(state) - set(params))
            raise ConfigurationError(f"state mismatch: missing {missing[:5]}, unexpected {extra[:5]}")
        for name, p in params.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ConfigurationError(f"{name}: shape {arr.shape} != {p.shape}")
            p.data = arr.astype(p.dtype, copy=True)

    def astype(self, dtype) -> "Module":
        """Cast every parameter in place (float64 for gradient checks)."""
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self


def _param(rng, shape, name, std, dtype):
    return Parameter(rng.normal(0.0, std, shape), name, dtype=dtype)


class ResidualBlock:
    """Gated WaveNet-style block around a (pitch-dependent) dilated convolution."""

    def __init__(self, index: int, kind: str, dilation: int, cfg: GeneratorConfig, rng, dtype):
        p = f"blocks.{index}"
        C, G, S = cfg.residual_channels, cfg.gate_channels, cfg.skip_channels
        std = cfg.init_std
        self.kind = kind
        self.conv = PdcnnLayer(C, G, dilation, kind, name=f"{p}.conv", rng=rng, std=std, dtype=dtype)
        self.aux_w = _param(rng, (G, cfg.aux_channels), f"{p}.aux.weight", std, dtype)
        self.aux_b = Parameter(np.zeros(G), f"{p}.aux.bias", dtype=dtype)
        self.skip_w = _param(rng, (S, G // 2), f"{p}.skip.weight", std, dtype)
        self.skip_b = Parameter(np.zeros(S), f"{p}.skip.bias", dtype=dtype)
        self.res_w = _param(rng, (C, G // 2), f"{p}.residual.weight", std, dtype)
        self.res_b = Parameter(np.zeros(C), f"{p}.residual.bias", dtype=dtype)
        self.half = G // 2
        self.scale_residual = cfg.scale_residual

    def parameters(self) -> list:
        return self.conv.parameters() + [self.aux_w, self.aux_b, self.skip_w, self.skip_b,
                                         self.res_w, self.res_b]

    def forward(self, x: Tensor, aux: Tensor, dilations=None):
        h = T.add(self.conv(x, dilations), T.conv1x1(aux, self.aux_w, self.aux_b))
        gated = T.mul(T.tanh(T.channel_slice(h, 0, self.half)),
                      T.sigmoid(T.channel_slice(h, self.half, 2 * self.half)))
        skip = T.conv1x1(gated, self.skip_w, self.skip_b)
        out = T.add(x, T.conv1x1(gated, self.res_w, self.res_b))
        if self.scale_residual:
            out = T.scale(out, np.sqrt(0.5))
        return out, skip


class Generator(Module):
    """Noise-to-waveform network: input 1x1 conv, residual blocks, two-layer output head."""

    def __init__(self, config: GeneratorConfig, seed: int = 0, dtype=np.float32):
        self.config = config
        rng = np.random.default_rng(seed)
        C, S, std = config.residual_channels, config.skip_channels, config.init_std
        self.input_w = _param(rng, (C, 1), "input.weight", std, dtype)
        self.input_b = Parameter(np.zeros(C), "input.bias", dtype=dtype)
        self.blocks = [ResidualBlock(i, kind, d, config, rng, dtype)
                       for i, (kind, d) in enumerate(config.block_layout())]
        self.head1_w = _param(rng, (S, S), "head.0.weight", std, dtype)
        self.head1_b = Parameter(np.zeros(S), "head.0.bias", dtype=dtype)
        self.head2_w = _param(rng, (1, S), "head.1.weight", std, dtype)
        self.head2_b = Parameter(np.zeros(1), "head.1.bias", dtype=dtype)

    def named_parameters(self) -> list:
        params = [self.input_w, self.input_b]
        for b in self.blocks:
            params.extend(b.parameters())
        params += [self.head1_w, self.head1_b, self.head2_w, self.head2_b]
        return [(p.name, p) for p in params]

    @property
    def adaptive_dilations(self) -> list:
        return self.config.adaptive_dilations()

    def make_schedule(self, f0_samples, sample_rate: float) -> DilationSchedule:
        return DilationSchedule.from_f0(f0_samples, sample_rate, self.config.dense_factor,
                                        self.adaptive_dilations)

    def _check_inputs(self, z: Tensor, aux: Tensor, schedule: Optional[DilationSchedule]):
        if z.data.ndim != 3 or z.shape[1] != 1:
            raise UsageError(f"noise must be [B, 1, T], got {z.shape}")
        B, _, L = z.shape
        if aux.shape != (B, self.config.aux_channels, L):
            raise UsageError(f"aux shape {aux.shape} not aligned with noise {z.shape}")
        if self.adaptive_dilations:
            if schedule is None:
                raise UsageError("generator has adaptive blocks but no dilation schedule was given")
            if schedule.length != L:
                raise UsageError(f"schedule length {schedule.length} != noise length {L}")
            if tuple(schedule.base_dilations) != tuple(self.adaptive_dilations):
                raise UsageError("schedule was built for different adaptive layers")

    def _skip_sum(self, z: Tensor, aux: Tensor, schedule, blocks: int):
        x = T.conv1x1(z, self.input_w, self.input_b)
        total = None
        adaptive_index = 0
        for block in self.blocks[:blocks]:
            dil = None
            if block.kind == ADAPTIVE:
                dil = schedule.for_layer(adaptive_index)
                adaptive_index += 1
            x, skip = block.forward(x, aux, dil)
            total = skip if total is None else T.add(total, skip)
        return total

    def head(self, skips: Tensor) -> Tensor:
        h = T.conv1x1(T.leaky_relu(skips, 0.2), self.head1_w, self.head1_b)
        return T.conv1x1(T.leaky_relu(h, 0.2), self.head2_w, self.head2_b)

    def forward(self, z: Tensor, aux: Tensor, schedule: Optional[DilationSchedule] = None) -> Tensor:
        self._check_inputs(z, aux, schedule)
        return self.head(self._skip_sum(z, aux, schedule, len(self.blocks)))

    __call__ = forward

    def cumulative_output(self, z: Tensor, aux: Tensor, schedule: Optional[DilationSchedule],
                          k: int) -> Tensor:
        """Output head applied to the skip sum of the first ``k`` blocks only."""
        if not 1 <= k <= len(self.blocks):
            raise UsageError(f"k must be in [1, {len(self.blocks)}], got {k}")
        self._check_inputs(z, aux, schedule)
        return self.head(self._skip_sum(z, aux, schedule, k))

    def block_skips(self, z: Tensor, aux: Tensor, schedule: Optional[DilationSchedule]) -> list:
        """Per-block skip outputs (for inspection; no graph is needed)."""
        self._check_inputs(z, aux, schedule)
        x = T.conv1x1(z, self.input_w, self.input_b)
        skips, adaptive_index = [], 0
        for block in self.blocks:
            dil = None
            if block.kind == ADAPTIVE:
                dil = schedule.for_layer(adaptive_index)
                adaptive_index += 1
            x, skip = block.forward(x, aux, dil)
            skips.append(skip)
        return skips


@dataclass
class DiscriminatorConfig:
    layers: int = 10
    channels: int = 64
    slope: float = 0.2
    init_std: float = 0.02

    def to_dict(self) -> dict:
        return asdict(self)


class Discriminator(Module):
    """Non-causal kernel-3 dilated conv stack; layer ``i`` has dilation ``2**i``."""

    def __init__(self, config: Optional[DiscriminatorConfig] = None, seed: int = 0, dtype=np.float32):
        self.config = config or DiscriminatorConfig()
        cfg = self.config
        if cfg.layers < 2:
            raise ConfigurationError("discriminator needs at least two layers")
        rng = np.random.default_rng(seed)
        self.layers = []
        for i in range(cfg.layers):
            cin = 1 if i == 0 else cfg.channels
            cout = 1 if i == cfg.layers - 1 else cfg.channels
            self.layers.append(PdcnnLayer(cin, cout, 2 ** i, FIXED, name=f"layers.{i}",
                                          rng=rng, std=cfg.init_std, dtype=dtype))

    def named_parameters(self) -> list:
        return [(p.name, p) for layer in self.layers for p in layer.parameters()]

    def forward(self, x: Tensor) -> Tensor:
        if x.data.ndim != 3 or x.shape[1] != 1:
            raise UsageError(f"discriminator input must be [B, 1, T], got {x.shape}")
        h = x
        for i, layer in enumerate(self.layers):
            h = layer(h)
            if i < len(self.layers) - 1:
                h = T.leaky_relu(h, self.config.slope)
        return h

    __call__ = forward


def build_generator(config: GeneratorConfig, seed: int = 0, dtype=np.float32) -> Generator:
    return Generator(config, seed=seed, dtype=dtype)


def receptive_field(config: GeneratorConfig, e_t: float = 1.0) -> int:
    """``1 + sum(2 * d')`` over every block's dilated convolution."""
    return 1 + sum(layer_extent(kind, d, e_t) for kind, d in config.block_layout())


def macroblock_receptive_fields(config: GeneratorConfig, e_t: float = 1.0) -> list:
    """Receptive field of each macroblock on its own (center sample included)."""
    out = []
    for m in config.macroblocks:
        sub = GeneratorConfig(macroblocks=[m], residual_channels=config.residual_channels,
                              gate_channels=config.gate_channels, skip_channels=config.skip_channels)
        out.append((m.label, receptive_field(sub, e_t)))
    return out
