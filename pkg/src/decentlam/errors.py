"""Exception hierarchy shared by every module of the package."""


class DecentLaMError(Exception):
    """Base class for all package errors."""


class InvalidNodeCount(DecentLaMError, ValueError):
    pass


class DisconnectedGraph(DecentLaMError, ValueError):
    pass


class NotPositiveDefinite(DecentLaMError, ValueError):
    pass


class SingularNormalEquations(DecentLaMError, ValueError):
    pass


class DimensionMismatch(DecentLaMError, ValueError):
    pass


class BadBatchSize(DecentLaMError, ValueError):
    pass


class InvalidSchedule(DecentLaMError, ValueError):
    pass


class DivergenceError(DecentLaMError, RuntimeError):
    """Raised when the relative error of an iterate blows past the divergence cap."""


class InsufficientPoints(DecentLaMError, ValueError):
    pass


class NonconvergedInput(DecentLaMError, ValueError):
    pass


class ConfigError(DecentLaMError, ValueError):
    """A configuration document failed to parse or validate.

    ``issues`` holds every problem found, each as ``(location, message)``
    where location is a ``section.key`` path or ``line N``.
    """

    def __init__(self, issues):
        self.issues = list(issues)
        lines = [f"{loc}: {msg}" for loc, msg in self.issues]
        super().__init__("invalid configuration:\n  " + "\n  ".join(lines))
