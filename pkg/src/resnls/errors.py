"""Exception hierarchy shared by every module.

Each top-level family carries the process exit code the CLI maps it to.
"""

from __future__ import annotations


class ResNLSError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


# -- contract / shape errors (programming errors, "internal" exit code) -----


class DimensionError(ResNLSError, ValueError):
    """Operand shapes are incompatible."""


class ContractError(ResNLSError, RuntimeError):
    """A documented precondition of an operation was violated."""


class DegenerateBatchError(ContractError):
    """Batch statistics requested over fewer than two elements."""


class EmptySequenceError(DimensionError):
    pass


# -- configuration ----------------------------------------------------------


class ConfigError(ResNLSError, ValueError):
    exit_code = 2

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


class IncompatibleModelError(ConfigError):
    """Model file does not match the run configuration (window, normalizer, ranges)."""


# -- data -------------------------------------------------------------------


class DataError(ResNLSError, ValueError):
    exit_code = 3


class MalformedRowError(DataError):
    def __init__(self, message: str, row: int):
        super().__init__(message)
        self.row = row


class DuplicateDateError(DataError):
    pass


class NonPositivePriceError(DataError):
    pass


class OHLCOrderError(DataError):
    pass


class DegenerateRangeError(DataError):
    """Normalizer fit over a range with fewer than two distinct values."""


class EmptyDatasetError(DataError):
    pass


class MissingForecastError(DataError):
    pass


# -- model files --------------------------------------------------------------


class ModelLoadError(DataError):
    pass


class VersionMismatchError(ModelLoadError):
    pass


class ChecksumError(ModelLoadError):
    pass


class TruncatedModelError(ChecksumError):
    """File ends before the manifest says it should; reported as a checksum failure."""


# -- numerics -----------------------------------------------------------------


class DivergenceError(ResNLSError, ArithmeticError):
    exit_code = 4

    def __init__(self, message: str, epoch: int | None = None, batch: int | None = None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch


class DomainError(ResNLSError, ValueError):
    """Argument outside the mathematical domain of a formula."""


class GradCheckFailure(ResNLSError):
    exit_code = 5
