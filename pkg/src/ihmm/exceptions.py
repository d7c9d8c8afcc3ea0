"""Exception hierarchy shared by all modules."""


class IHMMError(Exception):
    """Base class for errors raised by this package."""


# data ingestion / preparation
class MissingColumn(IHMMError):
    pass


class NonmonotoneTime(IHMMError):
    pass


class StatusValueConflict(IHMMError):
    pass


class DimensionMismatch(IHMMError):
    pass


class DegenerateDimension(IHMMError):
    pass


class UnknownCategory(IHMMError):
    pass


class EmptyDataset(IHMMError):
    pass


# numerical
class NonFiniteInput(IHMMError, ValueError):
    pass


class SingularObservedBlock(IHMMError, ArithmeticError):
    pass


class IndexOutOfRange(IHMMError, IndexError):
    pass


class NoFeasibleState(IHMMError, AssertionError):
    """Forward filtering found no state compatible with the slice variables."""


class LevelUnreachable(IHMMError):
    pass


# posterior summaries
class NoDraws(IHMMError):
    pass


class NoPostBurninDraws(NoDraws):
    pass


class NoCells(IHMMError):
    pass


class NoLabels(IHMMError):
    pass


class LengthMismatch(IHMMError, ValueError):
    pass


class CheckpointError(IHMMError):
    pass
