"""
Error types for the robust discriminant analysis toolkit.
Every error carries a machine-parsable category and the CLI exit status.
"""


class ReddaError(Exception):
    """Base class for all toolkit errors."""

    category: str = "error"
    exit_code: int = 1


class ValidationError(ReddaError, ValueError):
    """Invalid input: wrong shapes, out-of-range parameters, malformed files."""

    category = "validation"
    exit_code = 1


class EstimationError(ReddaError, RuntimeError):
    """A model could not be estimated from the data at hand."""

    category = "estimation"
    exit_code = 2


class DegenerateCovarianceError(EstimationError):
    """Covariance matrix without a usable eigen-decomposition."""


class InitializationError(EstimationError):
    """Random initialization impossible with the available class sizes."""


class ContaminationError(EstimationError):
    """Outlier rejection sampling exceeded its draw budget."""


class DataIOError(ReddaError, OSError):
    """Dataset or report file could not be read or written."""

    category = "io"
    exit_code = 3
