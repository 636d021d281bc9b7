"""Exception types shared across the package."""


class DacbfError(Exception):
    """Base class for all package errors."""


class NonMonotoneTimeError(DacbfError):
    """A sample was pushed with a timestamp not strictly after the last one."""


class LookbackError(DacbfError):
    """A signal query reached further back than the retained history."""


class TrajectoryRangeError(DacbfError):
    """A trajectory was queried outside the span it was computed on."""


class DivergenceError(DacbfError):
    """Integration produced a non-finite state."""

    def __init__(self, message: str, step: int):
        super().__init__(message)
        self.step = step


class ContractViolationError(DacbfError):
    """An argument violated a documented precondition."""


class ConfigError(DacbfError):
    """A run configuration failed validation."""

    def __init__(self, message: str, field: str = ""):
        super().__init__(f"{field}: {message}" if field else message)
        self.field = field
