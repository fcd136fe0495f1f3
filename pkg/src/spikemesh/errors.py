"""Exception hierarchy shared by every stage of the pipeline."""


class SpikeMeshError(Exception):
    """Base class for all library errors."""


class InvalidInput(SpikeMeshError, ValueError):
    """Caller handed us something that violates a precondition."""


# volume I/O
class IoError(SpikeMeshError, OSError):
    pass


class UnsupportedHeaderField(InvalidInput):
    pass


class SizeMismatch(InvalidInput):
    pass


class DegenerateTarget(InvalidInput):
    pass


# surfaces
class EmptyMask(InvalidInput):
    pass


class NonManifoldOutput(SpikeMeshError):
    pass


class OpenSurface(InvalidInput):
    pass


class MalformedFile(InvalidInput):
    pass


# parameterization
class NotGenusZero(InvalidInput):
    pass


class NonManifold(InvalidInput):
    pass


class NoBijectiveMap(SpikeMeshError):
    """Flip repair gave up; the map is not returned."""


class ConnectivityMismatch(InvalidInput):
    pass


# annotation
class GridTooCoarse(InvalidInput):
    pass


# metrics / losses
class EmptySet(InvalidInput):
    pass


class DimMismatch(InvalidInput):
    pass


class ShapeMismatch(InvalidInput):
    pass


class MissingComponent(InvalidInput):
    pass


class DegenerateLabels(InvalidInput):
    pass


# classifier
class BranchWidthMismatch(InvalidInput):
    pass


class LengthMismatch(InvalidInput):
    pass


class NonFiniteWeights(InvalidInput):
    pass


class BadMagic(InvalidInput):
    pass


class VersionUnsupported(InvalidInput):
    pass


class TruncatedFile(InvalidInput):
    pass
