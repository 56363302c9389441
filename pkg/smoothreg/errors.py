"""Exception types raised across smoothreg."""
from typing import List, Optional


class SmoothregError(Exception):
    """Base class for every expected failure in smoothreg."""


class ConfigError(SmoothregError, ValueError):
    """Invalid experiment or model configuration."""


class DomainError(SmoothregError, ValueError):
    """Argument outside the mathematical domain of a function."""


class SpecialFunctionOverflow(SmoothregError, OverflowError):
    """Result not representable in 64-bit floating point."""


class UnsupportedFamilyError(SmoothregError, NotImplementedError):
    """Operation not available for this kernel or noise family."""


class QuadratureError(SmoothregError, ArithmeticError):
    """Adaptive quadrature did not converge."""

    def __init__(self, message: str, abserr: float = float('nan'), ier: int = 0,
                 info: Optional[dict] = None):
        super().__init__(message)
        self.abserr = abserr
        self.ier = ier
        self.info = info or {}


class DuplicatePointsError(SmoothregError, ValueError):
    """Design contains repeated points (zero separation distance)."""


class StepSizeError(SmoothregError, ValueError):
    """beta * eta_1 + alpha >= 1, gradient descent would not contract."""


class DivergenceError(SmoothregError, ArithmeticError):
    """Training loss blew up or became non-finite."""


class FactorizationError(SmoothregError, ArithmeticError):
    """Cholesky factorization failed even after jitter increases."""

    def __init__(self, message: str, jitter: float = 0.0):
        super().__init__(message)
        self.jitter = jitter


class ScheduleError(DomainError):
    """Schedule preconditions violated or outputs not representable."""


class InequalityViolation(SmoothregError, AssertionError):
    """A deterministic comparison inequality failed."""


class GridCellError(SmoothregError):
    """Learner failure annotated with the grid cell that produced it."""

    def __init__(self, key: tuple, cause: BaseException):
        super().__init__(f"Grid cell {key} failed: {cause}")
        self.key = key
        self.cause = cause

    def __reduce__(self):
        return (GridCellError, (self.key, self.cause))


class VerificationError(SmoothregError):
    """One or more verification checks failed."""

    def __init__(self, failures: List[str]):
        super().__init__(f"{len(failures)} verification check(s) failed: " + "; ".join(failures))
        self.failures = list(failures)
