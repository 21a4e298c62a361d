"""Exception types shared across the package."""
from __future__ import annotations


class AimmError(Exception):
    """Base class for all package errors."""


class DomainViolation(AimmError):
    """A transform argument left the admissible strip of a driving process.

    Carries the offending component index, the violated bound and the real
    part that was requested, so pricing layers can reject or re-damp.
    """

    def __init__(self, component: int, bound: float, value: float, detail: str = ""):
        self.component = component
        self.bound = bound
        self.value = value
        msg = f"component {component}: Re(u)={value:.6g} outside bound {bound:.6g}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class ContourError(AimmError):
    """No admissible damping parameter, or the chosen contour is inadmissible."""


class QuadratureError(AimmError):
    """Fourier integral truncation or refinement failed to meet tolerance."""


class NoSolution(AimmError):
    """Implied-volatility target price lies outside the no-arbitrage band."""


class RootBracketError(AimmError):
    """A term-structure root could not be bracketed inside the domain."""


class OptimizerFailure(AimmError):
    """A per-year calibration made no progress; reported, not fatal."""


class SchemaError(AimmError):
    """Market-data file does not match the expected schema."""


class ValidationError(AimmError):
    """Market-data content violates an invariant (with row pointer)."""


class IoError(AimmError):
    """Failed to write result tables."""
