"""Exception hierarchy shared by every stepmetric module."""


class StepMetricError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(StepMetricError, ValueError):
    """Invalid configuration, layer chain or argument value."""


class StateError(StepMetricError, RuntimeError):
    """An operation was called in the wrong order (e.g. backward before forward)."""


class GradientError(StepMetricError, FloatingPointError):
    """Non-finite values met while differentiating or checking gradients."""


class TrainingError(StepMetricError, RuntimeError):
    """Training aborted, typically because a loss or gradient went non-finite."""


class CheckpointError(StepMetricError, IOError):
    """A checkpoint file could not be decoded.

    ``reason`` is one of ``"bad-magic"``, ``"version"``, ``"truncated"`` or
    ``"corrupt"``; ``tensor`` names the tensor being read when relevant.
    """

    def __init__(self, reason, message, tensor=None):
        super().__init__(message)
        self.reason = reason
        self.tensor = tensor


class DatasetError(StepMetricError, IOError):
    """Dataset folder is missing, malformed or unreadable."""


class GeometryError(StepMetricError, ValueError):
    """No erase rectangle satisfies the requested area/aspect constraints."""


class SamplingError(StepMetricError, ValueError):
    """The dataset cannot satisfy the quadruplet sampling constraints."""
