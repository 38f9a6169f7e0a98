"""Detection and link-level analysis for multi-user MIMO joint communication and sensing."""

__version__ = "0.1.0"

from .errors import (ConfigError, ConvergenceError, DegenerateIlluminationError,  # noqa: E402
                     DegenerateRateError, DomainError, JcasError, NumericRangeError)
from .system_model import Scenario, make_constellation, synthesize_precoder  # noqa: E402

__all__ = [
    "ConfigError", "ConvergenceError", "DegenerateIlluminationError", "DegenerateRateError",
    "DomainError", "JcasError", "NumericRangeError", "Scenario", "make_constellation",
    "synthesize_precoder", "__version__",
]
