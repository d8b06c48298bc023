"""Exception hierarchy shared across the package.

Every error carries a short machine-parsable ``category`` string which the
CLI prints as ``error:<category>: <message>`` before exiting nonzero.
"""


class BeamVisionError(Exception):
    """Base class for all package errors."""

    category = "internal"


class InvalidArgumentError(BeamVisionError, ValueError):
    category = "invalid-argument"


class UnsupportedConfigurationError(BeamVisionError, ValueError):
    category = "unsupported-configuration"


class OutOfBoundsError(BeamVisionError, ValueError):
    category = "out-of-bounds"


class ManifestParseError(BeamVisionError, ValueError):
    category = "parse"


class ValidationError(BeamVisionError, ValueError):
    category = "validation"


class CheckpointError(BeamVisionError, RuntimeError):
    category = "checkpoint"


class DivergedTrainingError(BeamVisionError, RuntimeError):
    category = "diverged-training"


class ConfigError(BeamVisionError, ValueError):
    category = "config"
