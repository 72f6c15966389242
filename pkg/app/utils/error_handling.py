# app/utils/error_handling.py
"""Exception hierarchy shared by the services, the CLI and the HTTP API."""
from typing import Optional

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


class LegendError(Exception):
    """Base class for every failure raised by the simulator."""

    exit_code: int = EXIT_RUNTIME
    http_status: int = 500


class ShapeMismatchError(LegendError, ValueError):
    http_status = 422


class NumericalError(LegendError, ArithmeticError):
    """A NaN or Inf escaped a numeric operation."""


class RankError(LegendError, ValueError):
    http_status = 422


class ConfigMismatchError(LegendError, ValueError):
    """A LoRA configuration does not fit the stack or global state it is applied to."""

    http_status = 422


class ProtocolViolationError(LegendError):
    """Devices uploaded updates that cannot be aggregated together."""


class CapacityError(LegendError, ValueError):
    pass


class PlannerError(LegendError, ValueError):
    http_status = 422


class ConfigError(LegendError):
    exit_code = EXIT_CONFIG
    http_status = 422


class ProfileFormatError(ConfigError, ValueError):
    pass


class InfeasibleBudgetError(PlannerError):
    """The total rank budget cannot give every layer a rank of at least one."""

    exit_code = EXIT_CONFIG

    def __init__(self, message: str, minimum_budget: Optional[int] = None):
        super().__init__(message)
        self.minimum_budget = minimum_budget
