"""Exception types shared across the package."""


class RelucertError(Exception):
    """Base class for all package-specific errors."""


class MalformedDocument(RelucertError):
    """Input file is syntactically or structurally invalid."""


class ShapeMismatch(RelucertError):
    """Layer dimensions are inconsistent with their neighbors."""


class UnsupportedLayer(RelucertError):
    """Layer type is not handled (e.g. sigmoid)."""


class PoolWithoutRelu(RelucertError):
    """Max-pooling layer violates the ReLU-predecessor requirement."""


class DimensionMismatch(RelucertError):
    """Vector length does not match the expected dimension."""


class DegenerateInterval(RelucertError):
    """Relaxation interval too narrow to divide by safely."""


class MissingRelaxation(RelucertError):
    """Backward substitution requires a bound entry that was not computed."""


class EmptyWindow(RelucertError):
    """All nodes of a pooling window were pruned."""


class NumericalFailure(RelucertError):
    """Simplex pivot fell below tolerance with no valid alternative."""


class TooManyNodes(RelucertError):
    """Exact enumeration would exceed the activation-pattern cap."""


class AlreadySplit(RelucertError):
    """Attempt to split a node that is already constrained."""
