"""Exception types shared across the package.

The CLI maps these onto its exit-code contract: usage/config problems
(ConfigError) exit 2, everything else computational exits 1.
"""


class SritmError(Exception):
    """Base class for all package errors."""


class ShapeError(SritmError):
    """Tensor or plane shapes are incompatible for the requested operation."""


class FormatError(SritmError):
    """A serialized file (weights, checkpoint, shard, frame, sidecar) is malformed."""


class ConfigError(SritmError):
    """A configuration value, key or flag combination is invalid."""


class TrainingDiverged(SritmError):
    """The training loss became non-finite; a rescue checkpoint was written."""

    def __init__(self, message: str, checkpoint_path=None):
        super().__init__(message)
        self.checkpoint_path = checkpoint_path
