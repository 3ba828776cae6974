"""Exception hierarchy shared across the package."""


class HamsError(Exception):
    """Base class for all package errors."""


class DataError(HamsError):
    """Input data is malformed or violates a precondition."""


# geometry
class DegenerateConfiguration(DataError):
    pass


class NotARotation(DataError):
    pass


class InsufficientData(DataError):
    pass


# oracle
class ConfigInvalid(DataError):
    pass


class IndexOutOfRange(DataError, IndexError):
    pass


# losses
class ShapeMismatch(DataError, ValueError):
    pass


class EmptyMatchSet(DataError):
    pass


class TooManyInstances(DataError):
    pass


# alignment
class DisconnectedGraph(DataError):
    pass


class DegenerateEdge(DataError):
    pass


class NonFiniteEnergy(DataError):
    pass


# fusion
class MissingView(DataError):
    pass


# bodyfit
class TooFewPoints(DataError):
    pass


class DegenerateCorrespondences(DataError):
    pass


# metrics
class PersonCountMismatch(DataError):
    pass


class CountMismatch(DataError):
    pass


class DegenerateScene(DataError):
    pass


class ZeroBaseline(DataError):
    pass


class EmptyValidSet(DataError):
    pass


# io
class BadMagic(DataError):
    pass


class UnsupportedVersion(DataError):
    pass


class UnsupportedDtype(DataError):
    pass


class TruncatedPayload(DataError):
    pass


class DimOverflow(DataError):
    pass


class EmptyCloud(DataError):
    pass


class WriteFailure(HamsError, OSError):
    pass
