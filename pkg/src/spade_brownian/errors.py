"""Exception types shared across the package."""


class DomainError(ValueError):
    """Argument outside the domain an operation accepts."""


class PrecisionError(ArithmeticError):
    """A numerical method failed to reach its tolerance.

    The best available estimate is kept on the exception so callers can
    decide whether it is still usable.
    """

    def __init__(self, message, partial_value=None, achieved_error=None):
        super().__init__(message)
        self.partial_value = partial_value
        self.achieved_error = achieved_error
