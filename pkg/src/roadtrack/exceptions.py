"""Exception hierarchy shared by every subpackage."""


class RoadTrackError(Exception):
    """Base class for all library errors."""


class ValidationError(RoadTrackError, ValueError):
    """Invalid argument or configuration value."""


class NumericalError(RoadTrackError, ArithmeticError):
    """A numerical routine could not produce a meaningful answer."""


# geometry

class TooFewPoints(ValidationError):
    pass


class DegenerateConfiguration(NumericalError):
    pass


class DegenerateX(NumericalError):
    pass


class AtInfinity(NumericalError):
    """Homogeneous denominator vanished; the point maps to the line at infinity."""


class ParallelLines(NumericalError):
    pass


class NoAbovePlaneSamples(ValidationError):
    pass


# timesync

class NoSharedObjects(ValidationError):
    pass


class DisconnectedChain(ValidationError):
    pass


class TooFewObservations(ValidationError):
    pass


class ZeroDuration(ValidationError):
    pass


class OutOfDomain(ValidationError):
    pass


class NonMonotoneTrackWarning(UserWarning):
    """An object reversed direction inside a camera overlap and was skipped."""


# tracking

class DirectionMismatch(ValidationError):
    pass


class EmptyScene(ValidationError):
    pass


# evaluation

class ZeroDistance(NumericalError):
    pass


# simulator

class InfeasibleDensity(ValidationError):
    pass


# io

class ParseError(RoadTrackError, ValueError):
    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
        if line is not None:
            where = f"{where}:{line}" if where else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)


class SchemaMismatch(ParseError):
    pass
