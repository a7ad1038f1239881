"""Exception hierarchy shared by all modules."""


class PriddaError(Exception):
    """Base class for library errors."""


class InvalidArgument(PriddaError, ValueError):
    pass


class OutOfRange(InvalidArgument):
    pass


class HorizonTooShort(InvalidArgument):
    """Raised when the horizon T is below the minimum feasible value."""

    def __init__(self, horizon, minimum):
        self.horizon = horizon
        self.minimum = minimum
        super().__init__(
            f"horizon T={horizon} is too short; minimum feasible T is {minimum}"
        )


class InfinitePrivacyLoss(PriddaError, ZeroDivisionError):
    """Noise scale of zero gives no privacy at all."""


class SurrogateInvalid(OutOfRange):
    pass


class InfeasibleSampling(PriddaError):
    pass


class DegenerateSubproblem(PriddaError):
    """The inner minimization is not strongly convex."""


class InvalidSchedule(InvalidArgument):
    pass


class OracleScaleError(InvalidArgument):
    pass


class ParseError(PriddaError):
    def __init__(self, message, line=None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


class ConfigError(InvalidArgument):
    pass
