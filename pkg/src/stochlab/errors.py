"""Exception types shared across the package."""


class StochLabError(Exception):
    """Base class for all package errors."""


class DataError(StochLabError, ValueError):
    """Input data is missing, malformed or too short for the request."""


class NumericalError(StochLabError, ArithmeticError):
    """A computation produced non-finite values or failed to factorize."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message if step is None else f"{message} (step {step})")
        self.step = step
