"""Exception types raised across the package."""


class AnosovLabError(Exception):
    """Base class for all package errors."""


class PointTooFar(AnosovLabError):
    pass


class BudgetExceeded(AnosovLabError):
    pass


class DimensionMismatch(AnosovLabError):
    pass


class NoSpectralGap(AnosovLabError):
    pass


class CurvatureNotNegative(AnosovLabError):
    pass


class NewtonDiverged(AnosovLabError):
    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history or [])


class NotHolomorphic(AnosovLabError):
    pass


class OutsideDomain(AnosovLabError):
    pass


class StepFailure(AnosovLabError):
    pass


class NonfiniteState(AnosovLabError):
    pass


class TailNotConverged(AnosovLabError):
    pass


class RiccatiBlowup(AnosovLabError):
    pass


class ResidualBlowup(AnosovLabError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class WindingNotZero(AnosovLabError):
    pass


class InvalidCase(AnosovLabError):
    pass


class IncompleteClasses(AnosovLabError):
    pass


class EmptyWindow(AnosovLabError):
    pass


class ConfigError(AnosovLabError):
    pass


class StageError(AnosovLabError):
    """A pipeline stage failed; ``stage`` names it and ``__cause__`` holds the original error."""

    def __init__(self, stage, error):
        super().__init__(f"stage {stage!r}: {type(error).__name__}: {error}")
        self.stage = stage
        self.error = error
