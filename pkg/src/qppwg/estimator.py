"""scikit-learn style wrapper: ``fit`` trains on (features, waveforms), ``predict`` synthesizes."""
from __future__ import annotations

from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .conditioning import DEFAULT_HOP, DEFAULT_SAMPLE_RATE, AuxFeatures
from .errors import UsageError
from .models import GeneratorConfig, preset
from .pitch import estimate_f0, log_f0_rmse
from .training import TrainConfig, Trainer
from .vocoder import Utterance, synthesize


def check_features(X) -> list:
    """A non-empty list of :class:`AuxFeatures` (a single record is wrapped)."""
    if isinstance(X, AuxFeatures):
        X = [X]
    X = list(X)
    if not X:
        raise UsageError("expected at least one feature record")
    for i, feats in enumerate(X):
        if not isinstance(feats, AuxFeatures):
            raise UsageError(f"item {i} is {type(feats).__name__}, expected AuxFeatures")
    return X


def check_waveforms(y, X: list, hop_samples: int) -> list:
    """1-D float waveforms, one per feature record, each covering its frames."""
    if isinstance(y, np.ndarray) and y.ndim == 1:
        y = [y]
    y = [np.asarray(w, dtype=np.float32) for w in y]
    if len(y) != len(X):
        raise UsageError(f"got {len(y)} waveforms for {len(X)} feature records")
    for i, (wave, feats) in enumerate(zip(y, X)):
        if wave.ndim != 1:
            raise UsageError(f"waveform {i} must be 1-D, got shape {wave.shape}")
        if not np.all(np.isfinite(wave)):
            raise UsageError(f"waveform {i} contains non-finite samples")
        need = feats.frame_count * hop_samples
        if wave.shape[0] < need - hop_samples:
            raise UsageError(f"waveform {i} has {wave.shape[0]} samples, features cover {need}")
    return y


class QPPWGVocoder(BaseEstimator):
    """Trains a generator/discriminator pair and synthesizes waveforms from frame features.

    ``generator`` is a preset name or a config dict; ``train`` is ``"desk"``,
    ``"full"`` or a dict of :class:`TrainConfig` overrides on the desk recipe.
    """

    def __init__(self, generator="desk", train="desk", steps: Optional[int] = None, seed: int = 0,
                 f0_ratio: float = 1.0, sample_rate: int = DEFAULT_SAMPLE_RATE,
                 hop_samples: int = DEFAULT_HOP):
        self.generator = generator
        self.train = train
        self.steps = steps
        self.seed = seed
        self.f0_ratio = f0_ratio
        self.sample_rate = sample_rate
        self.hop_samples = hop_samples

    def _generator_config(self) -> GeneratorConfig:
        if isinstance(self.generator, GeneratorConfig):
            return self.generator
        if isinstance(self.generator, str):
            return preset(self.generator)
        return GeneratorConfig.from_dict(dict(self.generator))

    def _train_config(self) -> TrainConfig:
        common = dict(sample_rate=self.sample_rate, hop_samples=self.hop_samples)
        if isinstance(self.train, TrainConfig):
            return self.train
        if self.train == "full":
            return TrainConfig(**common)
        if self.train == "desk":
            return TrainConfig.desk(**common)
        if isinstance(self.train, dict):
            return TrainConfig.desk(**{**common, **self.train})
        raise UsageError(f"train must be 'desk', 'full' or a dict, got {self.train!r}")

    def fit(self, X, y):
        X = check_features(X)
        y = check_waveforms(y, X, self.hop_samples)
        utts = [Utterance(f"utt{i:03d}", wave, feats) for i, (feats, wave) in enumerate(zip(X, y))]
        self.trainer_ = Trainer(self._generator_config(), self._train_config(), utts, seed=self.seed)
        self.loss_history_ = self.trainer_.run(self.steps)
        self.generator_ = self.trainer_.gen
        self.normalizer_ = self.trainer_.normalizer
        return self

    def predict(self, X, f0_ratio: Optional[float] = None) -> list:
        check_is_fitted(self, "generator_")
        X = check_features(X)
        ratio = self.f0_ratio if f0_ratio is None else f0_ratio
        return [synthesize(self.generator_, feats, self.normalizer_, f0_ratio=ratio, seed=self.seed,
                           sample_rate=self.sample_rate, hop_samples=self.hop_samples) for feats in X]

    def score(self, X, y=None) -> float:
        """Negative mean log-F0 RMSE between (scaled) conditioning F0 and the F0 of predictions."""
        X = check_features(X)
        errors = []
        for feats, wave in zip(X, self.predict(X)):
            est = estimate_f0(wave, self.sample_rate, hop_samples=self.hop_samples)
            errors.append(log_f0_rmse(feats.f0 * self.f0_ratio, est[:feats.frame_count]))
        return -float(np.mean(errors))
