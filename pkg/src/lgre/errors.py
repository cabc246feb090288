"""Exception taxonomy shared across the toolkit.

The CLI maps these onto distinct exit codes (see cli.EXIT_*), so raising the
right class matters more than the message wording.
"""


class LgreError(Exception):
    """Base class for all toolkit errors."""


class DimensionError(LgreError):
    """Operand shapes are incompatible for the requested operation."""


class ConfigError(LgreError):
    """A configuration value is invalid (bad kernel size, rate, key, ...)."""


class IntegrityError(LgreError):
    """Internal state is inconsistent: bad index, missing gradient,
    checkpoint/tensor mismatch."""


class ParseError(LgreError):
    """A dataset file could not be parsed; message carries file and line."""


class GenerationError(LgreError):
    """Synthetic data generation failed (e.g. contradictory rules)."""


class DivergenceError(LgreError):
    """Training produced a non-finite loss and was aborted."""
