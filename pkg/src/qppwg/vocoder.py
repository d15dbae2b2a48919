"""Glue between feature records, the generator and waveforms."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .conditioning import (
    AuxFeatures,
    DEFAULT_HOP,
    DEFAULT_SAMPLE_RATE,
    FeatureNormalizer,
    conditioning_frames,
    interpolate_f0,
    scale_f0,
    upsample_to_samples,
)
from .checkpoint import load_checkpoint
from .errors import ConfigurationError
from .models import Generator, GeneratorConfig


@dataclass
class Utterance:
    name: str
    audio: np.ndarray
    features: AuxFeatures

    def __post_init__(self):
        self.audio = np.asarray(self.audio, dtype=np.float32).reshape(-1)


@dataclass
class PreparedUtterance:
    """Frame-level arrays ready for cropping: normalized aux frames and continuous F0."""

    name: str
    audio: np.ndarray
    aux_frames: np.ndarray
    f0: np.ndarray

    @property
    def frame_count(self) -> int:
        return self.f0.shape[0]


def conditioning_for(features: AuxFeatures, normalizer: FeatureNormalizer, f0_ratio: float = 1.0):
    """Normalized ``[N, 39]`` frames and the (scaled) continuous F0 they were built from."""
    cont = scale_f0(interpolate_f0(features.f0), f0_ratio)
    frames = normalizer.transform(conditioning_frames(features, cont)).astype(np.float32)
    return frames, cont


def prepare(utt: Utterance, normalizer: FeatureNormalizer, hop_samples: int = DEFAULT_HOP) -> PreparedUtterance:
    n = utt.features.frame_count
    audio = utt.audio
    if audio.shape[0] < n * hop_samples:
        audio = np.pad(audio, (0, n * hop_samples - audio.shape[0]))
    frames, cont = conditioning_for(utt.features, normalizer)
    return PreparedUtterance(utt.name, audio[: n * hop_samples], frames, cont)


def fit_normalizer(utterances) -> FeatureNormalizer:
    return FeatureNormalizer().fit([conditioning_frames(u.features) for u in utterances])


def synthesize(generator: Generator, features: AuxFeatures, normalizer: FeatureNormalizer, *,
               f0_ratio: float = 1.0, seed: int = 0, sample_rate: int = DEFAULT_SAMPLE_RATE,
               hop_samples: int = DEFAULT_HOP, return_schedule: bool = False):
    """Generate a waveform from frame features, scaling F0 before conditioning and scheduling."""
    frames, cont = conditioning_for(features, normalizer, f0_ratio)
    if frames.shape[1] != generator.config.aux_channels:
        raise ConfigurationError(
            f"features provide {frames.shape[1]} channels, generator expects {generator.config.aux_channels}")
    aux = upsample_to_samples(frames[None], hop_samples).astype(np.float32)
    length = aux.shape[-1]
    schedule = None
    if generator.adaptive_dilations:
        schedule = generator.make_schedule(upsample_to_samples(cont, hop_samples)[None], sample_rate)
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((1, 1, length), dtype=np.float32)
    with T.no_grad():
        y = generator(T.Tensor(z), T.Tensor(aux), schedule).data[0, 0]
    return (y, schedule) if return_schedule else y


def load_generator(path) -> tuple[Generator, FeatureNormalizer, dict]:
    """Rebuild the generator and normalizer stored in a checkpoint."""
    header, blobs = load_checkpoint(path)
    if "generator" not in header:
        raise ConfigurationError(f"{path} has no generator section")
    gen = Generator(GeneratorConfig.from_dict(header["generator"]))
    prefix = "generator/"
    gen.load_state_dict({k[len(prefix):]: v for k, v in blobs.items() if k.startswith(prefix)})
    normalizer = FeatureNormalizer.from_dict(header["normalizer"])
    return gen, normalizer, header
