"""Exception hierarchy shared across the package.

Two top-level families map onto the CLI exit codes: ``DataError`` (bad or
insufficient input, exit 3) and ``NumericalError`` (solver / numerical
failure, exit 4).
"""


class ContextShapError(Exception):
    """Base class for all package errors."""


class DataError(ContextShapError):
    """Invalid, missing, or insufficient input data."""


class SchemaError(DataError):
    """CSV columns or config fields do not match the expected schema."""


class RowError(DataError):
    """A specific input row could not be parsed; carries the line number."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class SizingError(DataError):
    """Dataset or split too small for the requested operation."""


class ShapeError(DataError):
    """Array dimensions inconsistent with the declared layout."""


class ParameterError(DataError):
    """A configuration value is out of its valid range."""


class StateError(DataError):
    """Operation invoked on an unfitted or otherwise unready object."""


class PlacementError(DataError):
    """Anomaly positions cannot satisfy the separation constraints."""


class GroupingError(DataError):
    """Attributions from different methods/selections mixed in one group."""


class NumericalError(ContextShapError):
    """Numerical failure: singular systems, divergence, undefined values."""


class SolverError(NumericalError):
    """A linear system or regression could not be solved reliably."""


class DivergenceError(NumericalError):
    """Iterative training produced a non-finite loss."""

    def __init__(self, message: str, epoch: int | None = None):
        super().__init__(message if epoch is None else f"epoch {epoch}: {message}")
        self.epoch = epoch


class UndefinedSimilarityError(NumericalError):
    """Cosine similarity undefined because a vector has zero weighted norm."""


class DegenerateVarianceError(NumericalError):
    """A variance-based statistic received a zero-variance group."""


class IntegrityError(NumericalError):
    """An attribution violates the additive decomposition identity."""
