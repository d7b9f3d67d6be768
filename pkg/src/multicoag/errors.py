"""Exception types shared across the package."""

from __future__ import annotations


class MulticoagError(Exception):
    """Base class for all package errors."""


class ConfigError(MulticoagError, ValueError):
    """Raised for malformed or inconsistent run configurations."""


class NumericalError(MulticoagError, ArithmeticError):
    """Raised when an integrator stage produces NaN or Inf.

    ``stage`` is the 1-based Runge-Kutta stage index and ``t`` the time at the
    start of the failing step.
    """

    def __init__(self, message: str, *, stage: int | None = None, t: float | None = None):
        super().__init__(message)
        self.stage = stage
        self.t = t


class IncompatibleGridError(MulticoagError, ValueError):
    """Raised when two trajectories do not live on the same lattice or time grid."""
