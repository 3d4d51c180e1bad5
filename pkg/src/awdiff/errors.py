"""Exception hierarchy shared by every awdiff module."""


class AwdiffError(Exception):
    """Base class for all domain errors raised by awdiff."""


class ParameterError(AwdiffError, ValueError):
    """An argument is outside its admissible range."""


class InvariantError(AwdiffError, ValueError):
    """A data object violates one of its structural invariants."""


class FormatError(AwdiffError):
    """A file does not follow the expected on-disk format."""


class CorruptionError(FormatError):
    """A file header is well formed but the payload does not match it."""


class DivergenceError(AwdiffError, FloatingPointError):
    """Non-finite values appeared during sampling or training."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step
