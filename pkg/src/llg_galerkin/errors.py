"""Exception hierarchy shared by all modules."""


class LLGError(Exception):
    """Base class for every error raised by the package."""


class BadDomain(LLGError, ValueError):
    pass


class DomainMismatch(LLGError, ValueError):
    pass


class TruncationTooLarge(LLGError, ValueError):
    pass


class OutsideBall(LLGError, ValueError):
    pass


class NotUnitLength(LLGError, ValueError):
    pass


class WrongDimension(LLGError, ValueError):
    pass


class SeriesTooShort(LLGError, ValueError):
    pass


class NumericalFailure(LLGError, RuntimeError):
    """Failures of the time integration (mapped to CLI exit code 3)."""


class NewtonDiverged(NumericalFailure):
    pass


class StepRejected(NumericalFailure):
    pass


class TooFewRows(LLGError, ValueError):
    pass


class CalibrationFailed(LLGError, RuntimeError):
    pass


class FlowMismatch(LLGError, ValueError):
    pass


class NotNearSphere(LLGError, ValueError):
    pass


class ParseError(LLGError, ValueError):
    def __init__(self, message, line=None, column=None):
        super().__init__(message)
        self.line = line
        self.column = column


class ValidationError(LLGError, ValueError):
    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key
