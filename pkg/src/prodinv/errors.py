"""Exception hierarchy shared by the solver modules and the CLI."""


class ProdInvError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(ProdInvError, ValueError):
    pass


class Unstable(ValidationError):
    pass


class BadActionBounds(ValidationError):
    pass


class NegativeCost(ValidationError):
    pass


class BadTruncation(ValidationError):
    pass


class OutOfRange(ValidationError, IndexError):
    pass


class PhiUndefined(ValidationError):
    pass


class DegenerateRatio(ValidationError):
    pass


class UnstableInventory(ValidationError):
    pass


class SolveError(ProdInvError):
    """Raised when a numerical solve cannot produce a trustworthy answer."""


class Reducible(SolveError):
    pass


class SolveFailed(SolveError):
    pass


class NonConvergence(SolveError):
    pass


class SimulationError(ProdInvError):
    pass


class ParseError(ProdInvError):
    def __init__(self, message, lineno=None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


class IoError(ProdInvError, OSError):
    pass
