"""Exception hierarchy.

Every numerical failure derives from :class:`NumericalError` so the CLI can map
it to exit code 3; configuration problems raise :class:`ConfigError` (exit 2).
"""


class ObsynError(Exception):
    """Base class for all package errors."""


class ConfigError(ObsynError):
    """Malformed or inconsistent run configuration."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class NumericalError(ObsynError):
    """Base class for failures raised by the numerical modules."""


class NotControllable(NumericalError):
    pass


class NotSPD(NumericalError):
    pass


class NoStabilizingSolution(NumericalError):
    pass


class NotHurwitz(NumericalError):
    pass


class NonFiniteState(NumericalError):
    def __init__(self, step, message=None):
        self.step = step
        super().__init__(message or f"non-finite state at step {step}")


class InvalidEpsilon(NumericalError):
    pass


class DomainViolation(NumericalError):
    def __init__(self, t=None, member=None, message=None):
        self.t = t
        self.member = member
        if message is None:
            message = "observation evaluated outside its domain"
            if t is not None:
                message += f" at t={t:g}"
            if member is not None:
                message += f" (bundle member {member})"
        super().__init__(message)


class DegenerateObservation(NumericalError):
    pass


class ZeroInitialState(NumericalError):
    pass


class MonitorDiverged(NumericalError):
    pass


class LineSearchStalled(NumericalError):
    pass


class CovarianceBreakdown(NumericalError):
    pass
