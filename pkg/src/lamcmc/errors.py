"""Exception types raised across the package."""


class LamcmcError(Exception):
    """Base class for package-specific failures."""


class InsufficientPointsError(LamcmcError, ValueError):
    """A neighbor or fitting query asked for more points than are stored."""


class DegenerateGeometryError(LamcmcError, RuntimeError):
    """The local Vandermonde system is rank deficient.

    Carries the condition estimate observed at failure so callers can decide
    how to recover (the sampler inserts a random in-ball point).
    """

    def __init__(self, message, condition_estimate=float("inf")):
        super().__init__(message)
        self.condition_estimate = condition_estimate


class DegenerateBallError(LamcmcError, RuntimeError):
    """Repeated refinement collisions inside one ball; the ball is saturated."""


class ModelEvaluationError(LamcmcError, RuntimeError):
    """A true-model evaluation failed; carries the query point."""

    def __init__(self, message, point=None, detail=""):
        super().__init__(message)
        self.point = point
        self.detail = detail


class ConstantSeriesError(LamcmcError, ValueError):
    """Autocorrelation of a zero-variance series is undefined."""


class InsufficientDataError(LamcmcError, ValueError):
    """Not enough checkpoints inside the requested fit window."""


class ConfigError(LamcmcError, ValueError):
    """Invalid run configuration; the message names the offending key."""


class CheckpointError(LamcmcError, RuntimeError):
    """A checkpoint file failed validation (version or checksum)."""
