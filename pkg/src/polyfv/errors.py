"""Exception hierarchy for mesh construction, generation and solving."""


class PolyFVError(Exception):
    """Base class for all package errors."""


class DegenerateFace(PolyFVError):
    pass


class OpenCell(PolyFVError):
    pass


class InvertedCell(PolyFVError):
    pass


class StarShapeViolation(PolyFVError):
    pass


class ParseError(PolyFVError):
    pass


class TopologyError(PolyFVError):
    pass


class GenerationFailed(PolyFVError):
    def __init__(self, message, cell=None, face=None):
        super().__init__(message)
        self.cell = cell
        self.face = face


class CalibrationFailed(PolyFVError):
    def __init__(self, message, best_amplitude=None, best_theta=None):
        super().__init__(message)
        self.best_amplitude = best_amplitude
        self.best_theta = best_theta


class NonConvexPairing(PolyFVError):
    pass


class SkewUndefined(PolyFVError):
    pass


class FaceDegenerate(PolyFVError):
    pass


class SingularStencil(PolyFVError):
    pass


class PreconditionerBreakdown(PolyFVError):
    pass


class NotConverged(PolyFVError):
    pass
