"""Frame-rate acoustic features to sample-rate conditioning and dilation schedules."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .errors import ConfigurationError, InvariantError, UsageError

MCEP_DIM = 35
CODEAP_DIM = 2
AUX_CHANNELS = 1 + 1 + MCEP_DIM + CODEAP_DIM
STREAM_LAYOUT = (("f0", 1), ("uv", 1), ("mcep", MCEP_DIM), ("codeap", CODEAP_DIM))
CHANNEL_ORDER = ("cont_f0", "uv") + tuple(f"mcep{i}" for i in range(MCEP_DIM)) + ("codeap0", "codeap1")

DEFAULT_SAMPLE_RATE = 22050
DEFAULT_HOP = 110
DEFAULT_DENSE_FACTOR = 4.0


@dataclass
class AuxFeatures:
    """Per-frame conditioning streams of one utterance.

    ``f0`` is raw (0 on unvoiced frames); ``uv`` is its voicing flag.
    """

    f0: np.ndarray
    uv: np.ndarray
    mcep: np.ndarray
    codeap: np.ndarray

    def __post_init__(self):
        self.f0 = np.asarray(self.f0, dtype=np.float64).reshape(-1)
        self.uv = np.asarray(self.uv, dtype=np.float64).reshape(-1)
        n = self.f0.shape[0]
        self.mcep = np.asarray(self.mcep, dtype=np.float64).reshape(n, MCEP_DIM)
        self.codeap = np.asarray(self.codeap, dtype=np.float64).reshape(n, CODEAP_DIM)
        if self.uv.shape[0] != n:
            raise ConfigurationError(f"uv has {self.uv.shape[0]} frames, f0 has {n}")
        if np.any(self.f0 < 0) or not np.all(np.isfinite(self.f0)):
            raise ConfigurationError("f0 must be finite and >= 0")
        if not np.all((self.uv == 0) | (self.uv == 1)):
            raise ConfigurationError("uv must be binary")
        if np.any((self.uv == 0) != (self.f0 == 0)):
            raise ConfigurationError("uv must be 0 exactly on frames where raw f0 is 0")

    @property
    def frame_count(self) -> int:
        return self.f0.shape[0]

    @classmethod
    def from_f0(cls, f0, mcep=None, codeap=None) -> "AuxFeatures":
        """Build features from a raw F0 track, deriving ``uv`` and zero-filling missing streams."""
        f0 = np.asarray(f0, dtype=np.float64)
        n = f0.shape[0]
        return cls(
            f0=f0,
            uv=(f0 > 0).astype(np.float64),
            mcep=np.zeros((n, MCEP_DIM)) if mcep is None else mcep,
            codeap=np.zeros((n, CODEAP_DIM)) if codeap is None else codeap,
        )

    def crop(self, start: int, stop: int) -> "AuxFeatures":
        return AuxFeatures(self.f0[start:stop], self.uv[start:stop],
                           self.mcep[start:stop], self.codeap[start:stop])


def interpolate_f0(raw_f0) -> np.ndarray:
    """Fill unvoiced (zero) frames by linear interpolation between voiced neighbours.

    Leading and trailing unvoiced runs hold the nearest voiced value.
    """
    f0 = np.asarray(raw_f0, dtype=np.float64).reshape(-1)
    voiced = np.flatnonzero(f0 > 0)
    if voiced.size == 0:
        raise UsageError("interpolate_f0: no voiced frame to anchor the contour")
    return np.interp(np.arange(f0.size), voiced, f0[voiced])


def scale_f0(f0, ratio: float) -> np.ndarray:
    if not ratio > 0:
        raise UsageError(f"F0 ratio must be positive, got {ratio}")
    return np.asarray(f0, dtype=np.float64) * ratio


def dilation_factors(f0_samples, sample_rate: float, dense_factor: float = DEFAULT_DENSE_FACTOR) -> np.ndarray:
    """Per-sample dilated factor ``Fs / (F0 * a)``."""
    f0 = np.asarray(f0_samples, dtype=np.float64)
    if dense_factor <= 0:
        raise UsageError(f"dense factor must be positive, got {dense_factor}")
    if np.any(f0 <= 0):
        raise InvariantError("dilation_factors: F0 must be positive on every sample (interpolate first)")
    return sample_rate / (f0 * dense_factor)


def round_half_away(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def round_dilations(e_t, base_dilation: int) -> np.ndarray:
    """Integer dilation per sample: ``max(1, round(e_t * d))``."""
    return np.maximum(1, round_half_away(np.asarray(e_t) * base_dilation)).astype(np.int64)


@dataclass
class DilationSchedule:
    """Per-sample dilated factors plus the rounded dilation of every adaptive layer.

    ``d_prime[l]`` has the same shape as ``e_t`` (``[T]`` or ``[B, T]``) and
    belongs to the adaptive layer with base dilation ``base_dilations[l]``.
    """

    e_t: np.ndarray
    base_dilations: tuple
    d_prime: np.ndarray = field(repr=False)

    @classmethod
    def from_factors(cls, e_t, base_dilations: Sequence[int]) -> "DilationSchedule":
        e_t = np.asarray(e_t, dtype=np.float64)
        if np.any(e_t <= 0):
            raise InvariantError("dilated factors must be positive")
        bases = tuple(int(d) for d in base_dilations)
        if bases:
            d_prime = np.stack([round_dilations(e_t, d) for d in bases])
        else:
            d_prime = np.zeros((0,) + e_t.shape, dtype=np.int64)
        return cls(e_t=e_t, base_dilations=bases, d_prime=d_prime)

    @classmethod
    def from_f0(cls, f0_samples, sample_rate: float, dense_factor: float,
                base_dilations: Sequence[int]) -> "DilationSchedule":
        return cls.from_factors(dilation_factors(f0_samples, sample_rate, dense_factor), base_dilations)

    @property
    def length(self) -> int:
        return self.e_t.shape[-1]

    def for_layer(self, index: int) -> np.ndarray:
        return self.d_prime[index]

    def crop(self, start: int, stop: int) -> "DilationSchedule":
        return DilationSchedule(self.e_t[..., start:stop], self.base_dilations,
                                self.d_prime[..., start:stop])


def conditioning_frames(features: AuxFeatures, f0: Optional[np.ndarray] = None) -> np.ndarray:
    """Stack the ``[N, 39]`` frame matrix ``[cont_f0, uv, mcep, codeap]``.

    ``f0`` overrides the continuous F0 channel (used for F0 scaling).
    """
    cont = interpolate_f0(features.f0) if f0 is None else np.asarray(f0, dtype=np.float64)
    if cont.shape[0] != features.frame_count:
        raise ConfigurationError(f"continuous F0 has {cont.shape[0]} frames, features have {features.frame_count}")
    return np.concatenate(
        [cont[:, None], features.uv[:, None], features.mcep, features.codeap], axis=1
    )


def upsample_to_samples(frames, hop_samples: int) -> np.ndarray:
    """Repeat each frame ``hop_samples`` times.

    Accepts ``[N]``, ``[N, C]`` or ``[B, N, C]`` frames and returns ``[T]``,
    ``[C, T]`` or ``[B, C, T]`` respectively, with ``T = N * hop_samples``.
    """
    if hop_samples < 1:
        raise UsageError(f"hop_samples must be >= 1, got {hop_samples}")
    frames = np.asarray(frames)
    if frames.ndim == 1:
        return np.repeat(frames, hop_samples)
    rep = np.repeat(frames, hop_samples, axis=-2)
    return np.swapaxes(rep, -1, -2)


class FeatureNormalizer(TransformerMixin, BaseEstimator):
    """Per-channel standardization of ``[N, 39]`` conditioning frames.

    Channels with (near) zero variance, e.g. an all-voiced ``uv`` stream,
    keep unit scale so they are only mean-shifted.
    """

    def __init__(self, min_scale: float = 1e-5):
        self.min_scale = min_scale

    def fit(self, X, y=None):
        stacked = np.concatenate([np.asarray(x, dtype=np.float64) for x in _as_frame_list(X)], axis=0)
        if stacked.ndim != 2 or stacked.shape[0] == 0:
            raise UsageError("FeatureNormalizer needs at least one frame of [N, C] data")
        self.mean_ = stacked.mean(axis=0)
        std = stacked.std(axis=0)
        self.scale_ = np.where(std < self.min_scale, 1.0, std)
        self.n_features_in_ = stacked.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, ("mean_", "scale_"))
        arr = np.asarray(X, dtype=np.float64)
        if arr.shape[-1] != self.n_features_in_:
            raise ConfigurationError(f"expected {self.n_features_in_} channels, got {arr.shape[-1]}")
        return (arr - self.mean_) / self.scale_

    def inverse_transform(self, X):
        check_is_fitted(self, ("mean_", "scale_"))
        return np.asarray(X, dtype=np.float64) * self.scale_ + self.mean_

    def to_dict(self) -> dict:
        check_is_fitted(self, ("mean_", "scale_"))
        return {"mean": self.mean_.tolist(), "scale": self.scale_.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureNormalizer":
        norm = cls()
        norm.mean_ = np.asarray(d["mean"], dtype=np.float64)
        norm.scale_ = np.asarray(d["scale"], dtype=np.float64)
        norm.n_features_in_ = norm.mean_.shape[0]
        return norm


def _as_frame_list(X):
    if isinstance(X, np.ndarray) and X.ndim == 2:
        return [X]
    return list(X)


# -- feature files ------------------------------------------------------------

def write_features(manifest_path, features: AuxFeatures, sample_rate: int = DEFAULT_SAMPLE_RATE,
                   hop_samples: int = DEFAULT_HOP, **extra) -> Path:
    """Write ``<stem>.json`` plus the little-endian float32 stream file ``<stem>.f32``.

    Streams are stored one after another in layout order, each row-major
    ``[frame_count, dims]``. ``extra`` keys (e.g. ``audio``) go into the manifest.
    """
    manifest_path = Path(manifest_path)
    data_path = manifest_path.with_suffix(".f32")
    layout, offset, chunks = [], 0, []
    for name, dims in STREAM_LAYOUT:
        arr = np.asarray(getattr(features, name), dtype="<f4").reshape(features.frame_count, dims)
        layout.append({"name": name, "dims": dims, "offset": offset})
        offset += arr.size
        chunks.append(arr.reshape(-1))
    data_path.write_bytes(np.concatenate(chunks).astype("<f4").tobytes())
    manifest = {
        "sample_rate": int(sample_rate),
        "hop_samples": int(hop_samples),
        "frame_count": int(features.frame_count),
        "dtype": "float32-le",
        "layout": layout,
        "data": data_path.name,
        **extra,
    }
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return manifest_path


def read_features(manifest_path) -> tuple[AuxFeatures, dict]:
    manifest_path = Path(manifest_path)
    try:
        manifest = json.loads(manifest_path.read_text())
        raw = np.fromfile(manifest_path.parent / manifest["data"], dtype="<f4")
    except (OSError, KeyError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read feature files for {manifest_path}: {exc}") from exc
    n = int(manifest["frame_count"])
    streams = {}
    for entry in manifest["layout"]:
        size = n * int(entry["dims"])
        chunk = raw[entry["offset"]: entry["offset"] + size]
        if chunk.size != size:
            raise ConfigurationError(f"{manifest_path}: stream {entry['name']} truncated")
        streams[entry["name"]] = chunk.astype(np.float64).reshape(n, int(entry["dims"]))
    missing = {name for name, _ in STREAM_LAYOUT} - streams.keys()
    if missing:
        raise ConfigurationError(f"{manifest_path}: missing streams {sorted(missing)}; "
                                 f"expected layout {[name for name, _ in STREAM_LAYOUT]}")
    feats = AuxFeatures(streams["f0"][:, 0], streams["uv"][:, 0], streams["mcep"], streams["codeap"])
    return feats, manifest
