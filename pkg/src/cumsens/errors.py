"""Exception hierarchy shared by all modules."""


class SensitivityLabError(Exception):
    """Base class for every error raised by the package."""


class ArgumentError(SensitivityLabError, ValueError):
    """An argument violates an operation's precondition."""


class FieldUndefinedError(SensitivityLabError):
    """A vector field returned no admissible drift at a point."""


class DomainError(FieldUndefinedError):
    """A point lies outside the domain on which a function is defined."""


class IntegrationDivergedError(SensitivityLabError):
    """A state became non-finite during integration.

    The valid prefix of the trajectory is kept on ``trajectory`` and the last
    time with a finite state on ``last_time``.
    """

    def __init__(self, message, last_time, trajectory=None):
        super().__init__(message)
        self.last_time = last_time
        self.trajectory = trajectory


class UndefinedRatioError(SensitivityLabError):
    """The perturbation is identically zero on the grid, so no ratio exists."""


class NumericError(SensitivityLabError, ArithmeticError):
    """A numerical procedure failed (bracketing, decomposition, ...)."""


class NotApplicableError(SensitivityLabError):
    """The operation does not apply to this input (e.g. a non-SOF system)."""


class UnsupportedError(SensitivityLabError):
    """The input is valid but outside what the implementation handles."""


class ConstructionFailedError(SensitivityLabError):
    """A certificate construction did not reach its target."""


class MembershipFailedError(SensitivityLabError):
    """A matched point could not be placed inside the required neighbourhood."""
