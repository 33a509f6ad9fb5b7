"""Exception types raised by edgecalc.

Everything derives from ValueError so callers that only know about bad input
can keep catching that.
"""


class EdgecalcError(ValueError):
    pass


class GridError(EdgecalcError):
    pass


class WindowTruncationError(EdgecalcError):
    pass


class ScaleOutOfWindowError(EdgecalcError):
    pass


class DegreeError(EdgecalcError):
    pass


class DegenerateSymbolError(EdgecalcError):
    pass


class EmbeddingError(EdgecalcError):
    pass


class NeighborhoodError(EdgecalcError):
    pass


class AliasingError(EdgecalcError):
    pass


class PreconditionError(EdgecalcError):
    pass


class FitConditioningError(EdgecalcError):
    def __init__(self, message: str, condition_number: float):
        super().__init__(message)
        self.condition_number = condition_number
