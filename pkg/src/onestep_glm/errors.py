"""Exception hierarchy shared by every module of the package."""


class GlmError(Exception):
    """Base class for all errors raised by onestep_glm."""


class DomainError(GlmError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class ShapeError(GlmError, ValueError):
    """Array dimensions do not agree."""


class NotPositiveDefiniteError(GlmError, ArithmeticError):
    """Cholesky factorization met a non-positive pivot."""


class SingularInformationError(GlmError, ArithmeticError):
    """The information matrix is not positive definite during a fit."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class ConfigurationError(GlmError, ValueError):
    pass


class AllocationError(GlmError, ValueError):
    """Pilot allocation asks a worker for more rows than it holds."""

    def __init__(self, message, worker=None):
        super().__init__(message)
        self.worker = worker


class PilotTooSmallError(GlmError, ValueError):
    pass


class OneShotUnavailableError(GlmError):
    """At least one local fit failed, so no one-shot average exists."""

    def __init__(self, message, failed_workers=()):
        super().__init__(message)
        self.failed_workers = tuple(failed_workers)


class ProtocolError(GlmError):
    """Malformed frame: bad magic, version, type or payload layout."""


class IncompleteFrame(GlmError):
    """More bytes are needed before the frame can be decoded."""

    def __init__(self, needed):
        super().__init__(f"need {needed} more bytes")
        self.needed = needed


class WorkerError(GlmError):
    """A worker answered with an Error response."""

    def __init__(self, message, code=0, worker=None):
        super().__init__(message)
        self.code = code
        self.worker = worker


class AggregationError(GlmError):
    """A broadcast round failed at one worker; no partial result is kept."""

    def __init__(self, message, worker=None):
        super().__init__(message)
        self.worker = worker


class ExperimentError(GlmError):
    """A simulation exceeded its allowed replication failure rate."""
