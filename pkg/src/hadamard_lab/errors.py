"""Exception types raised across the package."""


class HadamardLabError(Exception):
    """Base class for all errors raised by hadamard_lab."""


class NoIntersection(HadamardLabError):
    pass


class LadderTooShort(HadamardLabError):
    pass


class AmplitudeTooLarge(HadamardLabError):
    pass


class DegenerateCell(HadamardLabError):
    pass


class SingularElement(HadamardLabError):
    pass


class FactorizationFailure(HadamardLabError):
    pass


class NodeMismatch(HadamardLabError):
    pass


class NoConvergence(HadamardLabError):
    pass


class NotPositiveDefinite(HadamardLabError):
    pass


class CountMismatch(HadamardLabError):
    pass


class ZeroFlux(HadamardLabError):
    pass


class DecayFailure(HadamardLabError):
    pass


class TooFewPoints(HadamardLabError):
    pass


class ScenarioError(HadamardLabError):
    """Raised when a scenario file is missing or malformed."""
