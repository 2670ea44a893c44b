"""Exception types shared across the package."""


class GandetError(Exception):
    pass


class PlacementError(GandetError):
    """Scene object placement failed after the rejection-sampling budget."""

    def __init__(self, seed, attempts):
        self.seed = seed
        self.attempts = attempts
        super().__init__(
            f"could not place non-overlapping objects for seed {seed} "
            f"after {attempts} attempts"
        )


class LevelError(GandetError, ValueError):
    """Distortion level outside the configured pool."""


class ShapeMismatchError(GandetError, ValueError):
    """Tensor or image shape does not match the configured model."""


class BatchSizeError(GandetError, ValueError):
    """Mini-batch size violates the augmented-batch contract."""


class NumericError(GandetError, ArithmeticError):
    """Non-finite loss or gradient encountered during training."""


class CheckpointError(GandetError, ValueError):
    """Checkpoint file is malformed or does not fit the architecture."""


class ConfigError(GandetError, ValueError):
    """Invalid experiment configuration."""
