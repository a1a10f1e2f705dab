"""
Exception hierarchy for armaxlab.
Each class maps to one error kind of the numerical and harness modules.
"""

from typing import Optional


class ArmaxLabError(Exception):
    """Base class for all armaxlab errors."""


class InvalidModelError(ArmaxLabError, ValueError):
    """Model parameters are nonfinite or violate a precondition."""


class DimensionError(ArmaxLabError, ValueError):
    """Orders or array shapes are inconsistent."""


class ExcitationError(ArmaxLabError):
    """A Gram matrix is numerically singular (insufficient excitation)."""

    def __init__(self, message: str, condition: float = float("inf")):
        super().__init__(message)
        self.condition = condition


class SolverError(ArmaxLabError):
    """An iterative solver failed to converge or hit a singular step."""

    def __init__(self, message: str, residual: float = float("nan"), iterations: int = 0):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class DegeneracyError(ArmaxLabError):
    """A recursive update would divide by a vanishing quantity."""

    def __init__(self, message: str, gamma: float = 0.0):
        super().__init__(message)
        self.gamma = gamma


class ConfigError(ArmaxLabError, ValueError):
    """An experiment configuration is invalid."""


class TrajectoryParseError(ArmaxLabError, ValueError):
    """A trajectory CSV file could not be parsed."""

    def __init__(self, message: str, row: Optional[int] = None):
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)
        self.row = row
