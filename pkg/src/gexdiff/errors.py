"""Exception hierarchy shared by every module.

Errors that describe bad input or configuration derive from ``ValueError``;
numeric failures during a run derive from ``ArithmeticError`` so the CLI can
map them to distinct exit codes.
"""


class GexdiffError(Exception):
    """Base class for all package errors."""


class InputError(GexdiffError, ValueError):
    """Invalid arguments, shapes, files or configuration."""


class NumericError(GexdiffError, ArithmeticError):
    """A computation produced an unusable numeric result."""


# tensor_core
class ShapeMismatch(InputError):
    pass


class NonFinite(NumericError):
    pass


class GraphCycle(GexdiffError, RuntimeError):
    pass


# dataset
class ZeroMeanGene(InputError):
    pass


class EmptyMatrix(InputError):
    pass


class NotRaw(InputError):
    pass


class NegativeValue(InputError):
    pass


class DuplicateGene(InputError):
    pass


class ParseError(InputError):
    def __init__(self, message, row=None, column=None):
        loc = ""
        if row is not None:
            loc = f" (row {row}" + (f", column {column}" if column is not None else "") + ")"
        super().__init__(message + loc)
        self.row = row
        self.column = column


# schedule / sampler
class InvalidRange(InputError):
    pass


class StepOutOfRange(InputError):
    pass


class InvalidEta(InputError):
    pass


class InvalidSteps(InputError):
    pass


class NegativeRadicand(NumericError):
    pass


# metrics
class EmptySample(InputError):
    pass


class DimensionMismatch(InputError):
    pass


class DegenerateRange(InputError):
    pass


class ConvergenceFailure(NumericError):
    pass


# synthdata / trainer / cli
class InvalidSpec(InputError):
    pass


class InvalidConfig(InputError):
    pass


class CheckpointError(InputError):
    pass
