"""Exception types shared across the package."""


class PsfForgeError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(PsfForgeError, ValueError):
    """Invalid configuration or precondition violation."""


class UnidentifiableParameterError(PsfForgeError):
    """Fisher matrix is singular along some position direction."""

    def __init__(self, message, direction=None):
        super().__init__(message)
        self.direction = direction


class EstimationFailedError(PsfForgeError):
    """A robust estimation procedure found no consensus."""


class UndefinedMetricError(PsfForgeError):
    """Metric requested on an input for which it is undefined."""


class OptimizationError(PsfForgeError):
    """A design loop hit a non-finite loss or diverged."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration
