"""Exception hierarchy shared by the engine, models and CLI.

Each class carries the process exit code the CLI maps it to.
"""


class QPPWGError(Exception):
    exit_code = 2


class UsageError(QPPWGError, ValueError):
    """Caller passed arguments that violate an operation's contract."""

    exit_code = 1


class ConfigurationError(QPPWGError, ValueError):
    """Shapes, configs or files disagree with each other."""

    exit_code = 2


class InvariantError(QPPWGError, RuntimeError):
    """An internal invariant was violated (e.g. nonpositive F0 after interpolation)."""

    exit_code = 2


class NumericalError(QPPWGError, FloatingPointError):
    """A loss became NaN or infinite during training."""

    exit_code = 3
