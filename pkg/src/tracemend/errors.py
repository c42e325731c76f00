"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: configuration problems exit with 1,
data problems with 2 and numeric failures with 3.
"""


class TracemendError(Exception):
    """Base class for all package errors."""


class ConfigError(TracemendError, ValueError):
    """Invalid configuration: bad ratios, missing columns, unknown options."""


class DataError(TracemendError, ValueError):
    """Problem with input data (logs, datasets, checkpoints)."""


class EmptyLogError(DataError):
    """An operation that needs traces received an empty log."""


class LogFormatError(DataError):
    """Malformed CSV/XES content; message carries the location."""


class InjectionError(DataError):
    """Anomaly injection could not produce a valid mutation."""


class DatasetFormatError(DataError):
    """Labeled-dataset file is malformed or version-incompatible."""


class CheckpointError(DataError):
    """Checkpoint file is malformed, truncated or version-incompatible."""


class ShapeError(TracemendError, ValueError):
    """Tensor operands have incompatible shapes."""


class TapeError(TracemendError, RuntimeError):
    """Backward was asked to run from a node with no recorded operations."""


class NumericError(TracemendError, ArithmeticError):
    """Training or inference produced non-finite values."""
