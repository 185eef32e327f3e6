"""Exception types raised across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain an operation is defined on."""


class EstimationError(RuntimeError):
    """A model could not be estimated from the supplied data."""


class ConvergenceError(EstimationError):
    """The variance-component optimizer hit its iteration limit.

    ``last_iterate`` carries the optimizer state when it stopped.
    """

    def __init__(self, message, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate
