"""Frame-wise F0 estimation by normalized cross-correlation, and the log-F0 RMSE metric."""
from __future__ import annotations

import numpy as np

from .conditioning import DEFAULT_HOP, DEFAULT_SAMPLE_RATE
from .errors import UsageError

VOICING_THRESHOLD = 0.3
# among candidate peaks, the shortest lag within this fraction of the best wins (octave guard)
OCTAVE_TOLERANCE = 0.85


def estimate_f0(waveform, sample_rate: int = DEFAULT_SAMPLE_RATE, fmin: float = 50.0,
                fmax: float = 500.0, hop_samples: int = DEFAULT_HOP, window_s: float = 0.025,
                threshold: float = VOICING_THRESHOLD) -> np.ndarray:
    """F0 in Hz per frame (0 = unvoiced).

    Frame ``n`` is centred on sample ``n * hop + hop // 2`` so frames line up
    with the feature frames. For each frame the normalized correlation between
    a ``window_s`` window and its lagged copy is computed for every lag in
    ``[fs / fmax, fs / fmin]``; the best peak (parabolically refined) gives
    the period, and frames whose peak is below ``threshold`` are unvoiced.
    """
    if not 0 < fmin < fmax <= sample_rate / 2:
        raise UsageError(f"need 0 < fmin < fmax <= Nyquist, got {fmin}, {fmax}")
    x = np.asarray(waveform, dtype=np.float64).reshape(-1)
    n_frames = x.shape[0] // hop_samples
    win = int(round(window_s * sample_rate))
    lag_min = max(2, int(np.floor(sample_rate / fmax)))
    lag_max = int(np.ceil(sample_rate / fmin))
    pad = win + lag_max + 1
    padded = np.concatenate([np.zeros(pad), x, np.zeros(pad)])
    sq_cum = np.concatenate([[0.0], np.cumsum(padded * padded)])
    f0 = np.zeros(n_frames)
    lags = np.arange(lag_max + 1)
    for n in range(n_frames):
        start = pad + n * hop_samples + hop_samples // 2 - win // 2
        ref = padded[start:start + win]
        e_ref = sq_cum[start + win] - sq_cum[start]
        if e_ref <= 1e-10 * win:
            continue
        corr = np.correlate(padded[start:start + win + lag_max], ref, mode="valid")
        e_lag = sq_cum[start + lags + win] - sq_cum[start + lags]
        nccf = corr / np.sqrt(e_ref * np.maximum(e_lag, 1e-20))
        lag = _pick_peak(nccf, lag_min, lag_max, threshold)
        if lag is None:
            continue
        f0[n] = sample_rate / lag
    return f0


def _pick_peak(nccf: np.ndarray, lag_min: int, lag_max: int, threshold: float = VOICING_THRESHOLD):
    seg = nccf[lag_min - 1:lag_max + 2]
    inner = seg[1:-1]
    is_peak = (inner >= seg[:-2]) & (inner > seg[2:])
    cand = np.flatnonzero(is_peak) + lag_min
    if cand.size == 0:
        return None
    values = nccf[cand]
    best = values.max()
    if best < threshold:
        return None
    lag = int(cand[np.flatnonzero(values >= OCTAVE_TOLERANCE * best)[0]])
    a, b, c = nccf[lag - 1], nccf[lag], nccf[lag + 1]
    denom = a - 2 * b + c
    offset = 0.5 * (a - c) / denom if denom < 0 else 0.0
    return lag + float(np.clip(offset, -0.5, 0.5))


def log_f0_rmse(reference_f0, estimated_f0) -> float:
    """RMSE of natural-log F0 over frames voiced in both tracks."""
    ref = np.asarray(reference_f0, dtype=np.float64)
    est = np.asarray(estimated_f0, dtype=np.float64)
    if ref.shape != est.shape:
        raise UsageError(f"frame counts differ: {ref.shape} vs {est.shape}")
    both = (ref > 0) & (est > 0)
    if not both.any():
        raise UsageError("no frame is voiced in both F0 tracks")
    d = np.log(ref[both]) - np.log(est[both])
    return float(np.sqrt(np.mean(d * d)))


def voiced_coverage(reference_f0, estimated_f0) -> float:
    """Fraction of reference-voiced frames that the estimate also marks voiced."""
    ref = np.asarray(reference_f0)
    est = np.asarray(estimated_f0)
    voiced = ref > 0
    if not voiced.any():
        return 0.0
    return float(np.mean(est[voiced] > 0))
