"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration: bad shapes, out-of-range parameters, unknown keys."""


class NumericalError(ArithmeticError):
    """A numerically impossible value was encountered (e.g. log of a nonpositive term)."""


class DivergenceError(RuntimeError):
    """An adaptive equalizer produced a non-finite loss."""

    def __init__(self, batch_index: int, message: str = ""):
        self.batch_index = batch_index
        super().__init__(message or f"non-finite loss at batch {batch_index}")
