"""Exception hierarchy shared across the package."""


class MMFitError(Exception):
    """Base class for all package errors."""


class DegenerateMinimalSet(MMFitError):
    """A minimal set does not determine a model (coincident points, identical lines, collinear quads)."""


class SingularModel(MMFitError):
    """A model instance is singular (e.g. non-invertible homography)."""


class InsufficientSupport(MMFitError):
    """A refit was requested with fewer positive weights than the minimal set size."""


class TooFewObservations(MMFitError):
    """Fewer observations than required for a minimal set."""


class EmptyPool(MMFitError):
    """All hypothesis slots of a pool degenerated."""


class EmptyPrefix(MMFitError):
    """A cumulative score was requested for an empty model prefix."""


class ShapeMismatch(MMFitError):
    """An array has the wrong shape for the network architecture."""


class FormatError(MMFitError):
    """A serialized document is malformed; the message names the offending field."""


class VersionError(FormatError):
    """A serialized document carries an unsupported version."""


class EmptyMatrix(MMFitError):
    """An assignment was requested on an empty cost matrix."""


class SingularIntrinsics(MMFitError):
    """The camera intrinsics matrix is not invertible."""


class EmptyGroup(MMFitError):
    """A rebalanced sampler was constructed with no (or an empty) scene group."""


class NonFiniteGradient(MMFitError):
    """A training step produced NaN or infinite gradients."""
