"""Structural reports, cumulative-output spectra, objective metrics and the RTF benchmark."""
from __future__ import annotations

import csv
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from threadpoolctl import threadpool_info, threadpool_limits

from . import tensor as T
from .conditioning import (
    DEFAULT_HOP,
    DEFAULT_SAMPLE_RATE,
    AuxFeatures,
    FeatureNormalizer,
    dilation_factors,
    upsample_to_samples,
)
from .errors import UsageError
from .losses import DEFAULT_RESOLUTIONS, StftLossConfig, multi_res_stft
from .models import Generator, GeneratorConfig, macroblock_receptive_fields, receptive_field
from .pitch import estimate_f0, log_f0_rmse, voiced_coverage
from .vocoder import conditioning_for

# cumulative spectra use the first (1024, 120, 600) loss resolution
SPECTRUM_RESOLUTION = DEFAULT_RESOLUTIONS[0]


def structure_report(config: GeneratorConfig, f0: float, sample_rate: int = DEFAULT_SAMPLE_RATE) -> dict:
    """Parameter count, dilation factor and receptive fields at a constant ``f0``."""
    if f0 <= 0:
        raise UsageError(f"f0 must be positive, got {f0}")
    e_t = float(dilation_factors(np.array([f0]), sample_rate, config.dense_factor)[0])
    return {
        "config": config.name,
        "parameters": Generator(config).num_parameters(),
        "f0": float(f0),
        "e_t": e_t,
        "receptive_field": receptive_field(config, e_t),
        "macroblocks": [{"macroblock": label, "receptive_field": rf}
                        for label, rf in macroblock_receptive_fields(config, e_t)],
    }


def _conditioning(generator: Generator, features: AuxFeatures, normalizer: FeatureNormalizer,
                  sample_rate: int, hop_samples: int, seed: int):
    frames, cont = conditioning_for(features, normalizer)
    aux = T.Tensor(upsample_to_samples(frames[None], hop_samples).astype(np.float32))
    schedule = None
    if generator.adaptive_dilations:
        schedule = generator.make_schedule(upsample_to_samples(cont, hop_samples)[None], sample_rate)
    z = np.random.default_rng(seed).standard_normal((1, 1, aux.shape[-1]), dtype=np.float32)
    return T.Tensor(z), aux, schedule


def magnitude_spectrogram(waveform, resolution=SPECTRUM_RESOLUTION) -> np.ndarray:
    """``[frames, bins]`` STFT magnitude of a 1-D waveform."""
    fft, hop, win = resolution
    x = np.asarray(waveform, dtype=np.float32).reshape(1, -1)
    if x.shape[1] < win:
        raise UsageError(f"waveform of {x.shape[1]} samples is shorter than the {win}-sample window")
    return T.stft_magnitude(T.Tensor(x), fft, hop, win).data[0].T


def cumulative_spectra(generator: Generator, features: AuxFeatures, normalizer: FeatureNormalizer, *,
                       seed: int = 0, sample_rate: int = DEFAULT_SAMPLE_RATE,
                       hop_samples: int = DEFAULT_HOP) -> dict:
    """Magnitude spectrograms of the head applied to skip sums of blocks ``1..k``, for every k.

    Keys are ``k`` (ints) plus ``"full"`` for the ordinary forward pass.
    """
    z, aux, schedule = _conditioning(generator, features, normalizer, sample_rate, hop_samples, seed)
    out = {}
    with T.no_grad():
        for k in range(1, generator.config.total_blocks + 1):
            out[k] = magnitude_spectrogram(generator.cumulative_output(z, aux, schedule, k).data[0, 0])
        out["full"] = magnitude_spectrogram(generator(z, aux, schedule).data[0, 0])
    return out


def write_spectra(spectra: dict, out_dir) -> list:
    """One CSV per entry (``cumulative_kNN.csv`` / ``full.csv``); rows are frames, columns bins."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for key, mag in spectra.items():
        path = out_dir / ("full.csv" if key == "full" else f"cumulative_k{key:02d}.csv")
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["frame"] + [f"bin{b}" for b in range(mag.shape[1])])
            for i, row in enumerate(mag):
                writer.writerow([i] + [repr(float(v)) for v in row])
        paths.append(path)
    return paths


def read_spectrum_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    return np.array([[float(v) for v in r[1:]] for r in rows])


# -- metrics ------------------------------------------------------------------

@dataclass
class MetricsReport:
    """Per-utterance log-F0 RMSE, voiced coverage and optional multi-resolution STFT distance."""

    rows: list = field(default_factory=list)

    def add(self, name: str, log_f0_rmse: float, coverage: float, spectral: Optional[float] = None):
        self.rows.append({"utterance": name, "log_f0_rmse": log_f0_rmse,
                          "voiced_coverage": coverage, "stft_distance": spectral})

    def mean(self, key: str) -> float:
        vals = [r[key] for r in self.rows if r[key] is not None and np.isfinite(r[key])]
        return float(np.mean(vals)) if vals else float("nan")

    def write_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        keys = ("log_f0_rmse", "voiced_coverage", "stft_distance")
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(("utterance",) + keys)
            for r in self.rows:
                writer.writerow([r["utterance"]] + ["" if r[k] is None else repr(float(r[k])) for k in keys])
            writer.writerow(["mean"] + [repr(self.mean(k)) for k in keys])
        return path


def utterance_metrics(reference_f0, generated, *, reference_audio=None, sample_rate: int = DEFAULT_SAMPLE_RATE,
                      hop_samples: int = DEFAULT_HOP, stft: Optional[StftLossConfig] = None) -> tuple:
    """``(log_f0_rmse, voiced_coverage, stft_distance)`` for one generated waveform.

    RMSE is NaN when no frame is voiced in both tracks; the STFT distance is
    only computed when ``reference_audio`` is given.
    """
    ref = np.asarray(reference_f0, dtype=np.float64)
    est = estimate_f0(generated, sample_rate, hop_samples=hop_samples)
    n = min(ref.shape[0], est.shape[0])
    ref, est = ref[:n], est[:n]
    try:
        rmse = log_f0_rmse(ref, est)
    except UsageError:
        rmse = float("nan")
    spectral = None
    if reference_audio is not None:
        m = min(len(reference_audio), len(generated))
        x = T.Tensor(np.asarray(reference_audio[:m], dtype=np.float32)[None])
        y = T.Tensor(np.asarray(generated[:m], dtype=np.float32)[None])
        with T.no_grad():
            spectral = multi_res_stft(x, y, stft).item()
    return rmse, voiced_coverage(ref, est), spectral


# -- benchmark ----------------------------------------------------------------

def _blas_threads() -> Optional[int]:
    counts = [p.get("num_threads") for p in threadpool_info() if p.get("num_threads")]
    return max(counts) if counts else None


def bench_rtf(generator: Generator, seconds: float = 1.0, *, threads: Optional[int] = None, runs: int = 3,
              f0: float = 150.0, seed: int = 0, sample_rate: int = DEFAULT_SAMPLE_RATE,
              hop_samples: int = DEFAULT_HOP) -> dict:
    """Median wall-clock of ``runs`` warm generator passes over ``seconds`` of audio.

    One untimed pass warms caches first. RTF is generation time over audio
    duration. Conditioning is a constant-F0 contour with random spectral
    channels; its values do not affect cost.
    """
    if runs < 3:
        raise UsageError("the benchmark needs at least 3 timed runs")
    n_frames = max(1, int(round(seconds * sample_rate / hop_samples)))
    rng = np.random.default_rng(seed)
    feats = AuxFeatures.from_f0(np.full(n_frames, f0), mcep=rng.normal(size=(n_frames, 35)),
                                codeap=rng.normal(size=(n_frames, 2)))
    normalizer = FeatureNormalizer().fit([np.zeros((1, generator.config.aux_channels))])
    samples = n_frames * hop_samples
    timings = []
    with threadpool_limits(limits=threads):
        used = threads if threads is not None else _blas_threads()
        for i in range(runs + 1):
            start = time.perf_counter()
            z, aux, schedule = _conditioning(generator, feats, normalizer, sample_rate, hop_samples, seed)
            with T.no_grad():
                generator(z, aux, schedule)
            elapsed = time.perf_counter() - start
            if i:
                timings.append(elapsed)
    median = statistics.median(timings)
    duration = samples / sample_rate
    return {
        "config": generator.config.name,
        "parameters": generator.num_parameters(),
        "threads": used,
        "seconds": duration,
        "samples": samples,
        "runs": runs,
        "median_s": median,
        "samples_per_s": samples / median,
        "rtf": median / duration,
    }


BENCH_COLUMNS = ("config", "parameters", "threads", "seconds", "samples", "runs", "median_s",
                 "samples_per_s", "rtf")


def write_rows(path, rows: Sequence[dict], columns: Sequence[str]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(columns), extrasaction="ignore")
        writer.writeheader()
        writer.writerows(rows)
    return path
