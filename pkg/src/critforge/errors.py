"""Exception types shared across the package."""

from __future__ import annotations


class CritforgeError(Exception):
    """Base class for all package errors."""


class DomainError(CritforgeError, ValueError):
    """An argument lies outside the domain of the operation."""


class ConvergenceError(CritforgeError, RuntimeError):
    """An iterative or series computation did not reach its tolerance.

    ``stage`` optionally names the pipeline stage or expansion order that failed.
    """

    def __init__(self, message: str, stage: object = None):
        super().__init__(message)
        self.stage = stage


class GeometryError(CritforgeError, ValueError):
    """A geometry description cannot be rasterized consistently."""


class IncompatibleDataError(CritforgeError, ValueError):
    """Boundary data violate a solvability condition."""


class PreconditionError(CritforgeError, ValueError):
    """An operation was called on input that fails its stated precondition."""
