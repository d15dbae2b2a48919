"""Mono 16-bit PCM WAVE I/O on top of the stdlib ``wave`` module."""
from __future__ import annotations

import wave
from pathlib import Path

import numpy as np

from .errors import ConfigurationError


def quantize_pcm16(x) -> np.ndarray:
    """Clip to [-1, 1) and scale to int16."""
    x = np.asarray(x, dtype=np.float64)
    x = np.clip(x, -1.0, 1.0 - 1.0 / 32768)
    return np.round(x * 32768).astype("<i2")


def write_wav(path, samples, sample_rate: int) -> Path:
    path = Path(path)
    pcm = quantize_pcm16(samples)
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(int(sample_rate))
        wf.writeframes(pcm.tobytes())
    return path


def read_wav(path) -> tuple[np.ndarray, int]:
    """Return float samples in [-1, 1) and the sample rate."""
    try:
        with wave.open(str(path), "rb") as wf:
            if wf.getnchannels() != 1 or wf.getsampwidth() != 2:
                raise ConfigurationError(f"{path}: expected mono 16-bit PCM")
            rate = wf.getframerate()
            raw = wf.readframes(wf.getnframes())
    except (OSError, wave.Error) as exc:
        raise ConfigurationError(f"cannot read WAVE file {path}: {exc}") from exc
    return np.frombuffer(raw, dtype="<i2").astype(np.float32) / 32768.0, rate
