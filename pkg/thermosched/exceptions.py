from typing import Any, Mapping, Optional, Union
import os


class ThermoschedException(Exception):
    """Base class for all exceptions from thermosched library."""


class DomainError(ValueError, ThermoschedException):
    """Raised when a numeric argument lies outside its mathematical domain, e.g., a negative
    cumulative noise or a time outside [0, 1]."""


class StateIndexError(IndexError, ThermoschedException):
    """Raised when a state index is out of range for a rate kernel."""


class CapacityError(ValueError, ThermoschedException):
    """Raised when an enumerable state space exceeds the supported number of states."""


class InvalidDistributionError(ValueError, ThermoschedException):
    """Raised when a probability vector has negative entries or does not sum to one."""


class SingularStateError(ValueError, ThermoschedException):
    """Raised when a computation divides by the probability of a state that carries no mass."""

    def __init__(self, state: Any, probability: float, message: Optional[str] = None) -> None:
        if message is None:
            message = (
                f"State {state} has probability {probability:.3g}, too small to appear in the "
                "denominator of a probability ratio."
            )
        self.state = state
        self.probability = probability
        super().__init__(message)


class ConfigurationError(ValueError, ThermoschedException):
    """Raised when a configuration, shape or mode combination is invalid."""


class NumericalError(ArithmeticError, ThermoschedException):
    """Raised when a computation produces a non-finite value. The `context` mapping carries the
    diagnostic details (time, position, step, ...) that identify where it happened."""

    def __init__(self, message: str, context: Optional[Mapping[str, Any]] = None) -> None:
        self.context = dict(context or {})
        if self.context:
            details = ", ".join(f"{k}={v}" for k, v in self.context.items())
            message = f"{message} ({details})"
        super().__init__(message)


class DegenerateProgressError(ValueError, ThermoschedException):
    """Raised when a cumulative progress curve has zero total progress."""


class InvalidCurveError(ValueError, ThermoschedException):
    """Raised when a warping or progress curve violates monotonicity or grid invariants."""


class CurveFormatError(ValueError, ThermoschedException):
    """Raised when a curve or sample file cannot be parsed."""

    def __init__(
        self, path: Union[str, os.PathLike], line: Optional[int], message: str
    ) -> None:
        self.path = path
        self.line = line
        location = f"{path}" if line is None else f"{path}, line {line}"
        super().__init__(f"{location}: {message}")


class ScheduleMismatchError(ValueError, ThermoschedException):
    """Raised when a schedule file does not match its declared kernel or source curve."""


class KernelNotFoundError(KeyError, ThermoschedException):
    """Raised when specified key does not match a registered rate kernel."""


class InvalidKernelError(ValueError, ThermoschedException):
    """Raised when a rate kernel is expected but input is not subclassing RateKernel."""


class NoiseNotFoundError(KeyError, ThermoschedException):
    """Raised when specified key does not match a registered noise schedule."""


class InvalidNoiseError(ValueError, ThermoschedException):
    """Raised when a noise schedule is expected but input is not subclassing NoiseSchedule."""
