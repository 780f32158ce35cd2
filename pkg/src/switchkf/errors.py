"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Array shapes do not agree."""


class NumericalError(ArithmeticError):
    """A recursion produced a non-finite or degenerate quantity."""

    def __init__(self, message, step=None):
        if step is not None:
            message = f"{message} (step {step})"
        super().__init__(message)
        self.step = step


class DataError(ValueError):
    """Malformed or incompatible episode data."""


class ConfigError(ValueError):
    """Invalid experiment configuration."""
