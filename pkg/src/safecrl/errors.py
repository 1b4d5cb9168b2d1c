"""Exception types shared across the library."""


class ConfigError(ValueError):
    """Invalid configuration or mismatched dimensions; the run cannot proceed."""


class NumericalError(FloatingPointError):
    """A non-finite value appeared where a finite one is required."""

    def __init__(self, message, **diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics


class ExperimentComplete(Exception):
    """Raised when a global step lies beyond the schedule's total budget."""
