"""Exception hierarchy shared by all skewlab modules."""


class SkewlabError(ValueError):
    """Base class for input and parameter validation failures."""


class DimensionError(SkewlabError):
    """Array shapes do not agree."""


class NotPositiveDefiniteError(SkewlabError):
    """A matrix that must be symmetric positive definite is not."""


class UnsupportedDimensionError(SkewlabError):
    """Requested dimension exceeds what the quadrature routines support."""


class InfeasibleParameterError(SkewlabError):
    """A parameter set violates its family's constraints."""


class UndefinedMomentError(SkewlabError):
    """The requested moment does not exist for the given degrees of freedom."""
