"""Exception hierarchy shared by every module of the laboratory."""


class MMCLabError(Exception):
    """Base class for all errors raised by mmc_lab."""


class InvalidArgument(MMCLabError, ValueError):
    """An argument is malformed, non-finite or violates a precondition."""


class DegenerateInput(InvalidArgument):
    """Two points that must be distinct coincide."""


class NotAdmissible(MMCLabError):
    """The drift/start-point pair admits no Markovian maximal coupling."""


class NumericalFailure(MMCLabError, ArithmeticError):
    """A numerical routine did not converge.

    The best available estimate is kept on ``estimate`` (``None`` when there
    is nothing meaningful to report).
    """

    def __init__(self, message, estimate=None):
        super().__init__(message)
        self.estimate = estimate
