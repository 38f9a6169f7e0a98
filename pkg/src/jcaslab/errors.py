"""Exception hierarchy shared by all jcaslab modules."""


class JcasError(Exception):
    """Base class for every error raised by jcaslab."""


class DomainError(JcasError, ValueError):
    """An argument lies outside the domain of the operation."""


class NumericRangeError(JcasError, OverflowError):
    """A result cannot be represented in double precision."""


class ConvergenceError(JcasError, ArithmeticError):
    """An iterative or quadrature routine failed to reach its tolerance."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})

    def __str__(self):
        base = super().__str__()
        if not self.diagnostics:
            return base
        extra = ", ".join(f"{k}={v!r}" for k, v in self.diagnostics.items())
        return f"{base} ({extra})"


class DegenerateRateError(DomainError):
    """Partial-fraction coefficients requested for coincident rates."""


class DegenerateIlluminationError(DomainError):
    """Every precoder stream has zero gain toward the requested angle."""


class ConfigError(JcasError, ValueError):
    """A scenario file could not be parsed or failed validation."""
