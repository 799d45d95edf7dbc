class StoppingError(Exception):
    """Base class of every domain error raised by the toolkit."""


class UnknownFamily(StoppingError, ValueError):
    pass


class ParamOutOfRange(StoppingError, ValueError):
    pass


class TooLarge(StoppingError, ValueError):
    pass


class Infeasible(StoppingError):
    pass


class LpError(StoppingError):
    pass


class LpInfeasible(LpError):
    pass


class LpUnbounded(LpError):
    pass


class PivotLimitExceeded(LpError):
    pass


class SolverInfeasible(StoppingError):
    pass


class SolverUnbounded(StoppingError):
    pass


class ZeroOptimum(StoppingError, ValueError):
    pass


class InvalidInterval(StoppingError, ValueError):
    pass


class TickNotInTrace(StoppingError, ValueError):
    pass


class MissingOptimum(StoppingError, ValueError):
    pass


class EmptyDataset(StoppingError, ValueError):
    pass


class NonFiniteLoss(StoppingError):
    pass


class SeriesMismatch(StoppingError, ValueError):
    pass


class EmptyScores(StoppingError, ValueError):
    pass


class InvalidDelta(StoppingError, ValueError):
    pass


class MissingPredictions(StoppingError, ValueError):
    pass


class KappaMismatch(StoppingError, ValueError):
    pass


class InsufficientPool(StoppingError, ValueError):
    pass


class MissingUpstream(StoppingError):
    pass


class StaleArtifact(StoppingError):
    pass
