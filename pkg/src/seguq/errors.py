"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration value or combination."""


class ShapeError(ValueError):
    """Input rejected because its shape does not match the declared one."""


class NumericError(FloatingPointError):
    """Non-finite value encountered where finiteness is required."""


class SizeLimitError(ValueError):
    """Problem size exceeds a hard cap of a quadratic-cost code path."""


class TrainingError(RuntimeError):
    """Optimization diverged.  Carries the epoch index at which it happened."""

    def __init__(self, message: str, epoch: int):
        super().__init__(f"{message} (epoch {epoch})")
        self.epoch = epoch


class UndefinedMeasureError(ValueError):
    """A statistic was requested on inputs for which it is not defined."""


class StageError(RuntimeError):
    """A pipeline stage failed.  Carries the stage name."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
