"""Numerical tools for locating interior critical points of high-contrast conductivity problems."""

from __future__ import annotations

from .errors import (
    ConvergenceError,
    CritforgeError,
    DomainError,
    GeometryError,
    IncompatibleDataError,
    PreconditionError,
)

__version__ = "0.1.0"

__all__ = [
    "ConvergenceError",
    "CritforgeError",
    "DomainError",
    "GeometryError",
    "IncompatibleDataError",
    "PreconditionError",
    "__version__",
]
