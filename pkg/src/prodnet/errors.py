"""Exception hierarchy shared across the package.

The CLI maps these onto its exit-code contract, so library code should raise
the most specific class that applies.
"""

from __future__ import annotations


class ProdnetError(Exception):
    """Base class for all package-specific errors."""


class DataError(ProdnetError):
    """Malformed, missing, or inconsistent input data."""


class TransportError(ProdnetError):
    """Network fetch failed and no usable cache entry exists."""


class InvertibilityError(ProdnetError):
    """(I - a) is singular or the Neumann series diverges."""


class CalibrationError(ProdnetError):
    """Base-year snapshot cannot be rationalized as a model equilibrium."""


class EquilibriumError(ProdnetError):
    """Exact solver failed to converge or produced an inadmissible state."""

    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual


class EstimationError(ProdnetError):
    """GMM estimation failed (non-convergence, rank deficiency, bad panel)."""
