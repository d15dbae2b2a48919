"""Harmonic-plus-noise utterances with exactly known F0, written in the feature-file format."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .audio import read_wav, write_wav
from .conditioning import (
    CODEAP_DIM,
    DEFAULT_HOP,
    DEFAULT_SAMPLE_RATE,
    MCEP_DIM,
    AuxFeatures,
    read_features,
    write_features,
)
from .errors import ConfigurationError
from .tensor import hann_window
from .vocoder import Utterance

F0_MIN, F0_MAX = 50.0, 500.0
_ANALYSIS_WIN = 512


@dataclass
class SyntheticUtteranceSpec:
    """One synthetic utterance.

    ``f0_knots`` is a piecewise-linear contour of ``(time_s, hz)`` pairs;
    harmonic ``k`` (1-based) has amplitude ``rolloff ** (k - 1)``. Inside
    ``unvoiced`` spans (seconds) only the noise floor remains and F0 is 0.
    """

    duration: float
    f0_knots: list
    harmonics: int = 8
    rolloff: float = 0.7
    noise_floor: float = 0.005
    seed: int = 0
    unvoiced: list = field(default_factory=list)
    amplitude: float = 0.5
    name: str = ""

    def __post_init__(self):
        self.f0_knots = [tuple(map(float, k)) for k in self.f0_knots]
        self.unvoiced = [tuple(map(float, s)) for s in self.unvoiced]
        if self.duration <= 0 or not self.f0_knots:
            raise ConfigurationError("duration must be positive and the contour non-empty")
        hz = np.array([k[1] for k in self.f0_knots])
        if np.any(hz < F0_MIN) or np.any(hz > F0_MAX):
            raise ConfigurationError(f"F0 contour must stay within [{F0_MIN}, {F0_MAX}] Hz")
        times = [k[0] for k in self.f0_knots]
        if times != sorted(times):
            raise ConfigurationError("F0 knots must be sorted by time")
        if self.harmonics < 0 or self.noise_floor < 0:
            raise ConfigurationError("harmonics and noise_floor must be non-negative")


def render(spec: SyntheticUtteranceSpec, sample_rate: int = DEFAULT_SAMPLE_RATE,
           hop_samples: int = DEFAULT_HOP) -> tuple[np.ndarray, AuxFeatures]:
    """Synthesize the waveform and its frame features."""
    rng = np.random.default_rng(spec.seed)
    n_frames = max(1, int(round(spec.duration * sample_rate / hop_samples)))
    n = n_frames * hop_samples
    t = np.arange(n) / sample_rate
    knot_t = np.array([k[0] for k in spec.f0_knots])
    knot_hz = np.array([k[1] for k in spec.f0_knots])
    f0 = np.interp(t, knot_t, knot_hz)
    voiced = np.ones(n, dtype=bool)
    for a, b in spec.unvoiced:
        voiced[(t >= a) & (t < b)] = False
    if spec.harmonics == 0:
        voiced[:] = False

    phase = rng.uniform(0, 2 * np.pi) + 2 * np.pi * np.cumsum(f0) / sample_rate
    periodic = np.zeros(n)
    if spec.harmonics:
        weights = spec.rolloff ** np.arange(spec.harmonics)
        for k, w in enumerate(weights, start=1):
            periodic += w * np.sin(k * phase) * (k * f0 < sample_rate / 2)
        periodic *= spec.amplitude / weights.sum()
    periodic *= voiced
    noise = spec.noise_floor * rng.standard_normal(n)
    audio = periodic + noise

    centers = np.arange(n_frames) * hop_samples + hop_samples // 2
    frame_voiced = voiced[centers]
    frame_f0 = np.where(frame_voiced, f0[centers], 0.0)
    mcep, codeap = band_summaries(audio, noise, centers, sample_rate)
    feats = AuxFeatures(frame_f0, frame_voiced.astype(np.float64), mcep, codeap)
    return audio, feats


def band_summaries(audio: np.ndarray, noise: np.ndarray, centers: np.ndarray,
                   sample_rate: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-frame log energies in 35 mel-spaced bands, and 2-band noise-to-total ratios (dB)."""
    half = _ANALYSIS_WIN // 2
    window = hann_window(_ANALYSIS_WIN, np.float64)

    def frame_power(sig):
        padded = np.pad(sig, (half, half))
        frames = sliding_window_view(padded, _ANALYSIS_WIN)[centers]
        spec = np.fft.rfft(frames * window, axis=-1)
        return spec.real ** 2 + spec.imag ** 2

    total = frame_power(audio)
    freqs = np.fft.rfftfreq(_ANALYSIS_WIN, 1.0 / sample_rate)
    mel = 2595.0 * np.log10(1.0 + freqs / 700.0)
    edges = np.linspace(0.0, mel[-1], MCEP_DIM + 1)
    band = np.clip(np.searchsorted(edges, mel, side="right") - 1, 0, MCEP_DIM - 1)
    sums = np.zeros((total.shape[0], MCEP_DIM))
    counts = np.bincount(band, minlength=MCEP_DIM).astype(np.float64)
    for b in range(MCEP_DIM):
        sums[:, b] = total[:, band == b].sum(axis=1)
    mcep = np.log(1e-10 + sums / np.maximum(counts, 1.0))

    noise_pow = frame_power(noise)
    split = freqs < sample_rate / 4
    codeap = np.zeros((total.shape[0], CODEAP_DIM))
    for j, sel in enumerate((split, ~split)):
        ratio = (noise_pow[:, sel].sum(axis=1) + 1e-12) / (total[:, sel].sum(axis=1) + 1e-12)
        codeap[:, j] = 10.0 * np.log10(np.minimum(ratio, 1.0))
    return mcep, codeap


def random_specs(count: int, seed: int = 0, duration: float = 1.0,
                 f0_range: Sequence[float] = (100.0, 250.0), with_gaps: bool = False,
                 prefix: str = "utt") -> list:
    """Varied piecewise-linear contours inside ``f0_range``."""
    rng = np.random.default_rng(seed)
    lo, hi = f0_range
    specs = []
    for i in range(count):
        n_knots = int(rng.integers(2, 5))
        times = np.linspace(0.0, duration, n_knots)
        hz = np.exp(rng.uniform(np.log(lo), np.log(hi), n_knots))
        gaps = []
        if with_gaps and rng.random() < 0.5:
            a = float(rng.uniform(0.2, 0.7) * duration)
            gaps.append((a, a + 0.1 * duration))
        specs.append(SyntheticUtteranceSpec(
            duration=duration,
            f0_knots=list(zip(times.tolist(), hz.tolist())),
            harmonics=int(rng.integers(6, 13)),
            rolloff=float(rng.uniform(0.6, 0.85)),
            noise_floor=float(rng.uniform(0.002, 0.01)),
            seed=int(rng.integers(2 ** 31)),
            unvoiced=gaps,
            name=f"{prefix}{i:03d}",
        ))
    return specs


def synthetic_utterances(specs: Sequence[SyntheticUtteranceSpec], sample_rate: int = DEFAULT_SAMPLE_RATE,
                         hop_samples: int = DEFAULT_HOP) -> list:
    """In-memory dataset (float audio, no quantization)."""
    out = []
    for i, spec in enumerate(specs):
        audio, feats = render(spec, sample_rate, hop_samples)
        out.append(Utterance(spec.name or f"utt{i:03d}", audio, feats))
    return out


def gen_synthetic(specs: Sequence[SyntheticUtteranceSpec], out_dir, sample_rate: int = DEFAULT_SAMPLE_RATE,
                  hop_samples: int = DEFAULT_HOP) -> list:
    """Write ``<name>.wav`` + ``<name>.json``/``<name>.f32`` per spec; returns manifest paths."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigurationError(f"cannot create output directory {out_dir}: {exc}") from exc
    manifests = []
    for i, spec in enumerate(specs):
        name = spec.name or f"utt{i:03d}"
        audio, feats = render(spec, sample_rate, hop_samples)
        try:
            write_wav(out_dir / f"{name}.wav", audio, sample_rate)
            manifests.append(write_features(out_dir / f"{name}.json", feats, sample_rate, hop_samples,
                                            audio=f"{name}.wav", spec=asdict(spec)))
        except OSError as exc:
            raise ConfigurationError(f"failed writing {out_dir / name}: {exc}") from exc
    return manifests


def load_dataset(data_dir) -> list:
    """Read every manifest in ``data_dir`` that references audio."""
    data_dir = Path(data_dir)
    utts = []
    for manifest_path in sorted(data_dir.glob("*.json")):
        feats, manifest = read_features(manifest_path)
        if "audio" not in manifest:
            continue
        audio, rate = read_wav(data_dir / manifest["audio"])
        if rate != manifest["sample_rate"]:
            raise ConfigurationError(f"{manifest_path}: audio rate {rate} != manifest {manifest['sample_rate']}")
        utts.append(Utterance(manifest_path.stem, audio, feats))
    if not utts:
        raise ConfigurationError(f"no utterances with audio found in {data_dir}")
    return utts
