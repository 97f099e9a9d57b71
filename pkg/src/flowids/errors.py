"""Exception hierarchy.

Every error raised by the package derives from :class:`FlowIdsError` so the
CLI can map it to an exit code and print the class name as the diagnostic.
"""


class FlowIdsError(Exception):
    """Base class for all package errors."""


class InputError(FlowIdsError, ValueError):
    """Bad input data or configuration (CLI exit code 2)."""


class NumericError(FlowIdsError, ArithmeticError):
    """Numeric failure at runtime (CLI exit code 3)."""


# flow ingestion
class MissingLabelColumn(InputError):
    pass


class RaggedRow(InputError):
    def __init__(self, row_index, expected, got):
        super().__init__(f"row {row_index}: expected {expected} cells, got {got}")
        self.row_index = row_index


class UnparsableCell(InputError):
    def __init__(self, row, col, token):
        super().__init__(f"row {row}, column {col!r}: cannot parse {token!r}")
        self.row, self.col, self.token = row, col, token


class NoLabels(InputError):
    pass


class ClassTooSmall(InputError):
    def __init__(self, label):
        super().__init__(f"class {label!r} has fewer than 2 rows")
        self.label = label


# preprocessing
class UnknownColumn(InputError):
    pass


class EmptyTable(InputError):
    pass


class DimensionMismatch(InputError):
    pass


class KOutOfRange(InputError):
    pass


class DegenerateData(InputError):
    pass


# tensor engine
class ShapeMismatch(InputError):
    def __init__(self, op, *shapes):
        super().__init__(f"{op}: incompatible shapes {', '.join(map(str, shapes))}")
        self.op, self.shapes = op, shapes


class NotOnTape(FlowIdsError):
    pass


class NonScalarLoss(FlowIdsError):
    pass


class NonFiniteOutput(NumericError):
    pass


# model / baselines
class InvalidConfig(InputError):
    pass


class LabelOutOfRange(InputError):
    pass


class SingleClass(InputError):
    pass


class NoConvergence(NumericError):
    def __init__(self, max_passes):
        super().__init__(f"SMO did not converge within {max_passes} iterations")
        self.max_passes = max_passes


# trainer / checkpoint
class NonFiniteLoss(NumericError):
    def __init__(self, epoch, batch):
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}")
        self.epoch, self.batch = epoch, batch


class EmptyData(InputError):
    pass


class UnknownVersion(InputError):
    pass


class ChecksumMismatch(InputError):
    pass


class Truncated(InputError):
    pass


# pipeline
class UnknownModel(InputError):
    pass


class IncompatibleArtifact(InputError):
    pass


# evaluation
class LengthMismatch(InputError):
    pass


class MissingProposed(InputError):
    pass
