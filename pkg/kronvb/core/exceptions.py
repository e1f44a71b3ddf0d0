"""
Custom exceptions for kronvb.

Every exception carries the process exit code the CLI reports for it.
"""
from typing import Optional, Sequence


class KronVBException(Exception):
    """Base exception for kronvb."""

    def __init__(self, message: str, exit_code: int = 1):
        self.message = message
        self.exit_code = exit_code
        super().__init__(self.message)


class ValidationError(KronVBException):
    """Validation error."""

    def __init__(self, message: str):
        super().__init__(message, exit_code=1)


class IndexBoundsError(ValidationError):
    """Multi-index entry outside its mode extent, or a linear index outside [1, p] (mode None)."""

    def __init__(self, mode: Optional[int], index: int, extent: int):
        self.mode = mode
        self.index = index
        where = "linear index" if mode is None else f"mode {mode}"
        super().__init__(f"Index out of bounds in {where}: {index} not in [1, {extent}]")


class DimensionError(ValidationError):
    """Shape or order mismatch."""

    def __init__(self, message: str):
        super().__init__(f"Dimension mismatch: {message}")


class DofError(ValidationError):
    """Degrees of freedom outside the admissible range."""

    def __init__(self, dof: float, bound: float, what: str = "degrees of freedom"):
        self.dof = dof
        self.bound = bound
        super().__init__(f"Invalid {what}: {dof} must exceed {bound}")


class DomainError(ValidationError):
    """Special-function argument outside its domain."""

    def __init__(self, message: str):
        super().__init__(f"Domain error: {message}")


class ConfigurationError(KronVBException):
    """Configuration error."""

    def __init__(self, message: str):
        super().__init__(f"Configuration error: {message}", exit_code=1)


class DegenerateMetricError(ConfigurationError):
    """The naive pullback metric was requested for optimization."""

    def __init__(self):
        super().__init__(
            "metric is degenerate: the naive pullback metric is not positive "
            "definite, use 'pullback' or 'product'"
        )


class NumericError(KronVBException):
    """Non-finite value or failed factorization."""

    def __init__(self, message: str, term: Optional[str] = None):
        self.term = term
        prefix = f"Numeric failure in {term}" if term else "Numeric failure"
        super().__init__(f"{prefix}: {message}", exit_code=2)


class NotSpdError(NumericError):
    """Matrix failed the symmetric positive definite check."""

    def __init__(self, message: str, term: Optional[str] = None):
        super().__init__(f"matrix is not SPD ({message})", term=term)


class StorageError(KronVBException):
    """File I/O or data ingestion error."""

    def __init__(self, message: str):
        super().__init__(f"Storage error: {message}", exit_code=3)


class CellNotFoundError(KronVBException):
    """Harness cell not found error."""

    def __init__(self, cell_id: str):
        super().__init__(f"Cell with ID '{cell_id}' not found", exit_code=1)


def describe_position(index: Sequence[int]) -> str:
    """Format a 0-based array position as a 1-based multi-index string."""
    return "(" + ", ".join(str(i + 1) for i in index) + ")"
