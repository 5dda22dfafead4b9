"""Exception types raised across the package.

Every error is a ``ValueError`` subclass so callers can catch broadly, and the
message always contains the short diagnostic phrase documented on the
operation that raises it.
"""


class SMCError(ValueError):
    """Base class for all package errors."""


class InvalidModelError(SMCError):
    pass


class HorizonExceededError(SMCError):
    pass


class DegenerateWeightsError(SMCError):
    pass


class InvalidOrderError(SMCError):
    pass


class SingleParticleError(SMCError):
    pass


class NoValidSampleError(SMCError):
    pass


class LineageError(SMCError):
    pass


class DegenerateCatalogueError(SMCError):
    pass


class PosteriorDegenerateError(SMCError):
    pass


class EnumerationTooLargeError(SMCError):
    pass


class SupportMismatchError(SMCError):
    pass


class NoReplicationsError(SMCError):
    pass


class NoApplicableBoundError(SMCError):
    pass


class ConfigError(SMCError):
    """Configuration problem; ``diagnostics`` holds line-anchored messages."""

    def __init__(self, diagnostics):
        if isinstance(diagnostics, str):
            diagnostics = [diagnostics]
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(self.diagnostics))
