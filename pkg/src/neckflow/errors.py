"""Exception types shared across the package."""


class NeckflowError(Exception):
    """Base class for all package errors."""


class ParameterError(NeckflowError, ValueError):
    """A scalar parameter is outside its admissible range."""


class DomainError(NeckflowError, ValueError):
    """A point, radius or region lies outside the domain of definition."""


class GeometryError(NeckflowError, ValueError):
    """The inclusion pair is inconsistent (overlap, missing bounds, ...)."""


class DataError(NeckflowError, ValueError):
    """Measured data is unusable (too few points, non-positive, degenerate)."""


class WeightError(NeckflowError, ValueError):
    """A weight function violates its bounds or orthogonality constraints."""


class NumericError(NeckflowError, RuntimeError):
    """A linear solve or eigensolve failed to reach its tolerance."""


class SolverError(NeckflowError, RuntimeError):
    """Nonlinear solve did not converge; carries the residual history."""

    def __init__(self, message, residual_history=None):
        super().__init__(message)
        self.residual_history = list(residual_history or [])


class SweepError(NeckflowError, RuntimeError):
    """Too many failed solves inside a parameter sweep."""


class ConfigError(NeckflowError, ValueError):
    """Invalid experiment configuration; message names the offending key."""
