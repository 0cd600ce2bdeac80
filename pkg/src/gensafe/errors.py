"""Exception types shared across gensafe."""
from typing import Optional

import numpy as np


class GenSafeError(Exception):
    """Base class for all gensafe errors."""


class NumericDomainError(GenSafeError, ValueError):
    """Raised when an input contains NaN or infinite values."""


class DegenerateInputError(GenSafeError, ValueError):
    """Raised when input data carries no usable structure (e.g. all points identical)."""


class ShapeMismatchError(GenSafeError, ValueError):
    """Raised when array lengths or shapes do not line up."""


class InsufficientDataError(GenSafeError, ValueError):
    """Raised when fewer samples are available than an operation requires."""


class StaleCacheError(GenSafeError, RuntimeError):
    """Raised when a backward pass is requested without a matching forward pass."""


class SchemaMismatchError(GenSafeError, ValueError):
    """Raised when a CSV file does not carry the expected schema header."""


class VersionMismatchError(GenSafeError, ValueError):
    """Raised when a serialized artifact has an unsupported format version."""


class NonConvergenceError(GenSafeError, RuntimeError):
    """Raised when an iterative solver hits its iteration limit.

    Args:
        message: Human readable description
        values: The last iterate, so callers can still inspect it
        delta: The last observed change between iterations
    """

    def __init__(self, message: str, values: Optional[np.ndarray] = None, delta: float = float('nan')):
        super().__init__(message)
        self.values = values
        self.delta = delta


class StageError(GenSafeError):
    """Wraps a failure with the name of the pipeline stage it happened in."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"Stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


def require_finite(name: str, value) -> np.ndarray:
    """Convert to a float array and reject NaN/inf values."""
    array = np.asarray(value, dtype=float)
    if not np.all(np.isfinite(array)):
        raise NumericDomainError(f"{name} contains non-finite values")
    return array
