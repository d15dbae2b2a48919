"""Quasi-periodic parallel WaveGAN vocoder on a small numpy autodiff engine."""
from .conditioning import AuxFeatures, DilationSchedule, FeatureNormalizer
from .errors import ConfigurationError, InvariantError, NumericalError, QPPWGError, UsageError
from .estimator import QPPWGVocoder
from .models import Discriminator, DiscriminatorConfig, Generator, GeneratorConfig, preset, receptive_field
from .training import RAdam, TrainConfig, Trainer
from .vocoder import synthesize

__version__ = "0.1.0"

__all__ = [
    "AuxFeatures",
    "ConfigurationError",
    "DilationSchedule",
    "Discriminator",
    "DiscriminatorConfig",
    "FeatureNormalizer",
    "Generator",
    "GeneratorConfig",
    "InvariantError",
    "NumericalError",
    "QPPWGError",
    "QPPWGVocoder",
    "RAdam",
    "TrainConfig",
    "Trainer",
    "UsageError",
    "preset",
    "receptive_field",
    "synthesize",
]
