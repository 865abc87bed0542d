"""Exception types shared across the registration pipeline."""


class IrvregError(Exception):
    """Base class for every error raised by this package."""


class DegenerateCorrespondence(IrvregError):
    """Point correspondences admit no unique homography (collinear or coincident)."""


class ProjectiveDegenerate(IrvregError):
    """A point projects onto (or too close to) the line at infinity."""


class SingularMatrix(IrvregError):
    """A matrix that must be invertible is numerically singular."""


class ImageTooSmall(IrvregError):
    """Image dimensions are below the minimum an operation supports."""


class ShapeMismatch(IrvregError):
    """Two rasters that must share a shape do not."""


class UnknownTransform(IrvregError):
    """Requested feature transform name is not registered."""


class EmptyShiftSet(IrvregError):
    """A correlation search was given no candidate shifts."""


class InvalidRadius(IrvregError):
    """Search radius does not fit the requested search pattern."""


class InputTooLarge(IrvregError):
    """Input exceeds the size limit of an exhaustive reference computation."""


class InsufficientCorrespondences(IrvregError):
    """Fewer usable correspondences than a homography fit requires."""


class DegenerateConfiguration(IrvregError):
    """Correspondence geometry cannot constrain a homography (e.g. collinear set)."""


class EmptyMask(IrvregError):
    """A validity mask selects no pixels."""


class CropOutOfBounds(IrvregError):
    """Requested crop (plus its safety margin) does not fit the source image."""


class NoSourcePairs(IrvregError):
    """Source directory contains no usable infrared/visible pairs."""


class DegenerateQuad(IrvregError):
    """Quadrilateral is self-intersecting and has no well-defined interior."""
