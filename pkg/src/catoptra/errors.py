"""Exception hierarchy shared by all catoptra modules."""


class CatoptraError(Exception):
    """Base class for every error raised by this package."""


class ConditionViolation(CatoptraError):
    """A mirror-pair configuration breaks one of the design conditions."""


class DegenerateFov(CatoptraError):
    """The requested field of view is outside the well-conditioned range."""


class SceneTooLarge(CatoptraError):
    """No viewing volume of the given sensor can enclose the scene box."""


class InfeasibleAngles(CatoptraError):
    """The optimal angle difference pushes the outer mirror past 90 degrees."""


class GeometryMismatch(CatoptraError):
    """Two camera poses cannot be related by the requested warp."""


class ShapeMismatch(CatoptraError):
    """Array or image shapes do not agree."""


class ParseError(CatoptraError):
    """A file could not be parsed.

    ``line`` is the 1-based line number for text formats, or None.
    """

    def __init__(self, reason, path=None, line=None):
        self.reason = reason
        self.path = path
        self.line = line
        where = str(path) if path is not None else "<input>"
        if line is not None:
            where = f"{where}:{line}"
        super().__init__(f"{where}: {reason}")


class NonTriangleFace(ParseError):
    """A mesh face has more than three vertices and triangulation is off."""


class EmptyHull(CatoptraError):
    """Carving removed every voxel."""


class BehindCamera(CatoptraError):
    """A Gaussian center has non-positive depth in the camera frame."""


class NoValidPixels(CatoptraError):
    """A depth loss was requested over an empty set of pixels."""


class Diverged(CatoptraError):
    """The optimizer produced a non-finite loss."""
