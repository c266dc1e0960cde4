"""Exception types raised across the package."""


class ManifoolError(Exception):
    """Base class for all package errors."""


class LogUndefined(ManifoolError):
    """Principal matrix logarithm missing or outside the group's algebra."""


class HorizonPoint(ManifoolError):
    """A projective transform sent a point to (or near) the line at infinity."""


class DegenerateTangent(ManifoolError):
    """Tangent basis is rank deficient or too badly conditioned to project onto."""


class DimensionMismatch(ManifoolError):
    pass


class EmptyDataset(ManifoolError):
    pass


class FormatError(ManifoolError):
    """Malformed IDX, PGM or weights file."""


class ZeroImage(ManifoolError):
    pass


class SegmentOverflow(ManifoolError):
    """Direct path would need more segments than allowed."""


class BracketFailure(ManifoolError):
    """Random-transform sampler could not bracket the requested score."""


class AllFailed(ManifoolError):
    """No image in the dataset produced a fooling transformation."""
