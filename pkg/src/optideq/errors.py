"""Exception types raised across the package."""


class OptiDeqError(Exception):
    """Base class for all package errors."""


class ConfigurationError(OptiDeqError, ValueError):
    """Inconsistent shapes, bad hyperparameters or malformed configuration."""


class NumericError(OptiDeqError, ArithmeticError):
    """A non-finite value appeared; ``stage`` names where."""

    def __init__(self, message, stage=None):
        super().__init__(message)
        self.stage = stage


class TrainingError(OptiDeqError, RuntimeError):
    pass


class EncodingError(OptiDeqError, ValueError):
    """A row or schema could not be encoded."""


class SplitError(OptiDeqError, ValueError):
    pass


class StageError(OptiDeqError, RuntimeError):
    """A pipeline stage failed; ``stage`` carries its name."""

    def __init__(self, stage, cause):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause
