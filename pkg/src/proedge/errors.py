"""Exception hierarchy shared by every module."""


class ProEdgeError(Exception):
    """Base class; ``kind`` is the machine-readable tag used by the CLI."""

    kind = "error"


class InvalidParameterError(ProEdgeError, ValueError):
    kind = "invalid-parameter"


class CompositionError(ProEdgeError, ValueError):
    kind = "composition"


class TraceFormatError(ProEdgeError, ValueError):
    kind = "trace-format"


class StateError(ProEdgeError, RuntimeError):
    kind = "state"


class InvalidActionError(ProEdgeError, ValueError):
    kind = "invalid-action"


class InvalidBoundsError(ProEdgeError, ValueError):
    kind = "invalid-bounds"


class NumericError(ProEdgeError, ArithmeticError):
    kind = "numeric"


class ShapeError(ProEdgeError, ValueError):
    kind = "shape"


class UsageError(ProEdgeError, RuntimeError):
    kind = "usage"


class InsufficientDataError(ProEdgeError, ValueError):
    kind = "insufficient-data"


class TrainingError(ProEdgeError, RuntimeError):
    kind = "training"


class CheckpointError(ProEdgeError, ValueError):
    kind = "checkpoint"


class ComparisonError(ProEdgeError, ValueError):
    kind = "comparison"


class ConfigError(ProEdgeError, ValueError):
    kind = "config"


class MissingInputError(ProEdgeError, FileNotFoundError):
    kind = "missing-input"
