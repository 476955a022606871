"""Exception hierarchy shared by every module."""


class AmleError(Exception):
    """Base class for all package errors."""


class DimensionError(AmleError, ValueError):
    """Structural mismatch between a vector and the space or statistic it belongs to."""


class PartialSampleError(AmleError):
    """The proposal budget ran out before the requested number of acceptances.

    The draws collected so far are kept on the exception so callers can
    inspect or salvage them.
    """

    def __init__(self, message, sample):
        super().__init__(message)
        self.sample = sample


class DegenerateSampleError(AmleError):
    """A sample has zero spread in some coordinate, so no bandwidth exists."""


class LostTrackError(AmleError):
    """Every kernel weight underflowed during a mean-shift step."""


class InsufficientDataError(AmleError):
    """A statistic cannot be computed from the given dataset."""


class EstimationFailure(AmleError):
    """AMLE could not produce an estimate (e.g. no discrete value kept enough draws)."""


class ConfigError(AmleError):
    """One or more configuration problems; ``errors`` lists all of them."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))
