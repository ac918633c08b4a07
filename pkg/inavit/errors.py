#!/usr/bin/env python3
"""
Exception hierarchy for the inavit package.

Every error raised on purpose by the package derives from InavitError so the
command-line entry point can turn it into a nonzero exit status.
"""


class InavitError(Exception):
    """Base class for all package errors."""


class ShapeError(InavitError, ValueError):
    """Raised when tensor shapes or extents do not agree."""


class NonFiniteError(InavitError, FloatingPointError):
    """
    Raised when an operation produces NaN or Inf.

    Attributes:
        where (str): Name of the primitive op or pipeline stage that failed.
    """

    def __init__(self, where: str, detail: str = ""):
        self.where = where
        message = f"non-finite values produced by '{where}'"
        if detail:
            message = f"{message}: {detail}"
        super().__init__(message)


class NoValidKeysError(InavitError, ValueError):
    """Raised when an attention query has every key masked out."""

    def __init__(self, detail: str = ""):
        message = "no valid keys"
        if detail:
            message = f"{message} ({detail})"
        super().__init__(message)


class ConfigError(InavitError, ValueError):
    """Raised for invalid or inconsistent configuration values."""


class InfeasibleConfigError(ConfigError):
    """Raised when a synthetic-data configuration cannot be realised."""


class DegenerateEpisodeError(InavitError):
    """Raised when a synthetic episode has no usable hand-object contact."""


class TrainingError(InavitError):
    """Raised when the training loop cannot continue (e.g. NaN loss)."""


class GradcheckFailure(InavitError):
    """Raised when reverse-mode and finite-difference gradients disagree."""


class CheckpointError(InavitError):
    """Base class for checkpoint read/write problems."""


class TruncatedPayloadError(CheckpointError):
    """Raised when the parameter payload is shorter than the manifest says."""

    def __init__(self, expected: int, actual: int):
        super().__init__(
            f"truncated payload: expected {expected} bytes, found {actual}"
        )


class UnknownParameterError(CheckpointError):
    """Raised when a checkpoint names a parameter the config does not define."""

    def __init__(self, name: str):
        self.name = name
        super().__init__(f"unknown parameter '{name}'")


class ShapeMismatchError(CheckpointError):
    """Raised when a stored parameter shape disagrees with the config."""

    def __init__(self, name: str, expected, actual):
        self.name = name
        super().__init__(
            f"shape mismatch for parameter '{name}': "
            f"expected {tuple(expected)}, found {tuple(actual)}"
        )


class UnsupportedVersionError(CheckpointError):
    """Raised when the checkpoint format version is not understood."""


class ConfigMismatchError(CheckpointError):
    """Raised when a checkpoint and a dataset disagree on their configuration."""


class LabelError(InavitError, ValueError):
    """Raised when a class label or top-k request is out of range."""
