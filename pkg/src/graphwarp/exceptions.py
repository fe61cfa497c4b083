"""Exception hierarchy shared across the package."""


class GraphWarpError(Exception):
    """Base class for all package errors."""


class ShapeError(GraphWarpError, ValueError):
    """Operand shapes are incompatible."""


class RankError(GraphWarpError, ValueError):
    """A scalar was required but a higher-rank tensor was given."""


class EmptySoftmaxError(GraphWarpError, ValueError):
    """Softmax over a slice where every entry is masked out."""


class NumericError(GraphWarpError, FloatingPointError):
    """A NaN or infinity appeared where finite values are required."""


class SmilesParseError(GraphWarpError, ValueError):
    """Malformed SMILES string. ``offset`` is the byte offset of the problem."""

    def __init__(self, message, smiles, offset):
        super().__init__(f"{message} at offset {offset} in {smiles!r}")
        self.reason = message
        self.smiles = smiles
        self.offset = offset


class SplitError(GraphWarpError, ValueError):
    """Dataset cannot be split as requested."""


class UndefinedMetricError(GraphWarpError, ValueError):
    """Metric is undefined for the given input (e.g. AUC with one class)."""


class LossError(GraphWarpError, ValueError):
    """Loss cannot be computed (e.g. every label is masked)."""
