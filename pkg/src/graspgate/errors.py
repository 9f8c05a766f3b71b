"""Exception hierarchy shared by every graspgate module."""


class GraspGateError(Exception):
    """Base class for all library errors."""


class ParseError(GraspGateError):
    """Input file could not be parsed or violates a field invariant."""


class InvalidPose(GraspGateError):
    pass


class InvalidSet(GraspGateError):
    pass


class NestedProduct(InvalidSet):
    pass


class EmptySet(ParseError):
    pass


class BoundsTooSmall(GraspGateError):
    pass


class ResolutionTooCoarse(GraspGateError):
    pass


class OutOfBounds(GraspGateError):
    pass


class EmptyPointSet(GraspGateError):
    pass


class NoCandidates(GraspGateError):
    pass


class InfeasibleScenario(GraspGateError):
    pass


class ObjectTooLarge(GraspGateError):
    pass


class NonAnalyticScene(GraspGateError):
    pass


class UnlabeledId(GraspGateError):
    pass


class PickFailureInExecuted(GraspGateError):
    pass


class InsufficientCandidates(GraspGateError):
    pass


class UnlabeledRegion(GraspGateError):
    pass
