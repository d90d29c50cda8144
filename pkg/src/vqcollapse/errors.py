"""Exceptions shared across the simulation modules."""


class DivergenceError(RuntimeError):
    """Raised when an integration blows past the configured magnitude limit."""

    def __init__(self, message, t=None, step=None):
        super().__init__(message)
        self.t = t
        self.step = step
