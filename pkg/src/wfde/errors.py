"""Exception hierarchy shared by every module."""


class WfdeError(Exception):
    """Base class for all package errors."""


class RegimeError(WfdeError, ValueError):
    """Parameters fall outside the admissible (d, gamma, beta, m) regime."""


class ParameterError(WfdeError, ValueError):
    """A profile or construction parameter is outside its admissible interval."""


class NonpositiveTime(WfdeError, ValueError):
    pass


class NonpositiveMass(WfdeError, ValueError):
    pass


class DegenerateTime(WfdeError, ValueError):
    """Shifted time t + T is not positive."""


class GridError(WfdeError, ValueError):
    pass


class DivergentTail(WfdeError, ArithmeticError):
    """The weighted integral over an exterior region is infinite."""


class InsufficientTailData(WfdeError, ValueError):
    pass


class NotInX(WfdeError, ValueError):
    """The field has infinite tail seminorm."""


class ZeroMass(WfdeError, ValueError):
    pass


class EarlyTime(WfdeError, ValueError):
    pass


class WindowError(WfdeError, ValueError):
    pass


class SolverError(WfdeError, RuntimeError):
    """Time integration failed; ``time`` records where."""

    def __init__(self, message: str, time: float | None = None):
        super().__init__(message if time is None else f"{message} (t={time:.17g})")
        self.time = time


class NonConvergence(SolverError):
    pass


class NegativeState(SolverError):
    pass


class ConfigError(WfdeError, ValueError):
    """Invalid experiment configuration; ``key`` is the dotted key path."""

    def __init__(self, message: str, key: str | None = None):
        super().__init__(message if key is None else f"{key}: {message}")
        self.key = key


class IoError(WfdeError, OSError):
    """Reading a config or writing an artifact failed."""
