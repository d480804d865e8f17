"""Exception hierarchy.

Validation errors subclass :class:`ValueError` so they compose with code that
already catches it; the CLI maps :class:`ValidationError` to exit code 2 and
:class:`NumericalError` to exit code 3.
"""


class ImpactGraphError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(ImpactGraphError, ValueError):
    """Bad input data, configuration, or arguments."""


class NumericalError(ImpactGraphError, ArithmeticError):
    """A computation produced a non-finite or degenerate value."""


# dataset
class MalformedHeader(ValidationError):
    pass


class NonNumericCell(ValidationError):
    def __init__(self, row, column, value):
        self.row, self.column, self.value = row, column, value
        super().__init__(f"non-numeric cell at row {row}, column {column!r}: {value!r}")


class EmptyFile(ValidationError):
    pass


class ConstantFeature(ValidationError):
    def __init__(self, column):
        self.column = column
        super().__init__(f"feature {column!r} is constant over the fitting rows")


class TooFewRows(ValidationError):
    pass


class BadFraction(ValidationError):
    pass


class MissingTarget(ValidationError):
    pass


class MaskMismatch(ValidationError):
    pass


# graph / tda
class TooFewNodes(ValidationError):
    pass


class ZeroSigma(NumericalError):
    pass


class IsolatedNode(ValidationError):
    pass


class RowMismatch(ValidationError):
    pass


# diffengine / models
class ShapeMismatch(ValidationError):
    def __init__(self, op, *shapes):
        self.op, self.shapes = op, shapes
        shown = " vs ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {shown}")


class NotScalarOutput(ValidationError):
    pass


class EmptyNeighborhood(ValidationError):
    pass


class UnboundArtifact(ValidationError):
    pass


# training / metrics
class EmptyMask(ValidationError):
    pass


class ZeroVariance(NumericalError):
    pass


class NonFiniteLoss(NumericalError):
    def __init__(self, epoch, value):
        self.epoch, self.value = epoch, value
        super().__init__(f"loss became non-finite ({value}) at epoch {epoch}")


class UnknownParameter(ValidationError):
    pass
