"""Exception hierarchy shared by the solver, predictor and tuning layers."""

from typing import Dict, Optional


class PrecoderError(Exception):
    """Root of every error raised by sparse_miso."""


class InvalidArgument(PrecoderError, ValueError):
    pass


class DomainError(PrecoderError, ValueError):
    pass


class ConfigError(PrecoderError):
    pass


class DegenerateSaddle(PrecoderError):
    """Raised when lambda1 = lambda2 = 0 and delta < 1, where the max-min has beta* = 0."""

    def __init__(self, delta: float):
        super().__init__(
            f"degenerate saddle: lambda1 = lambda2 = 0 requires delta >= 1 "
            f"(got delta={delta}); add an l1 or l2 penalty"
        )
        self.delta = delta


class ScalingUndefined(PrecoderError):
    pass


class NumericalInconsistency(PrecoderError):
    pass


class SolverNumericalError(PrecoderError):
    pass


class BracketFailure(PrecoderError):
    """A bracketed root search found no sign change where one must exist."""


class InfeasibleTarget(PrecoderError):
    def __init__(self, message: str, residuals: Optional[Dict[str, float]] = None):
        super().__init__(message)
        self.residuals = residuals or {}


class CalibrationDiverged(PrecoderError):
    def __init__(self, message: str, residuals: Optional[Dict[str, float]] = None):
        super().__init__(message)
        self.residuals = residuals or {}


class SolverNonConvergence(PrecoderError):
    def __init__(self, message: str, fraction: float):
        super().__init__(message)
        self.fraction = fraction
