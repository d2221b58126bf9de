"""Exception hierarchy shared across the package.

Every error raised deliberately by growlab derives from GrowlabError so the
CLI can separate "the computation failed" (exit 1) from "the invocation was
malformed" (exit 2, ConfigError).
"""


class GrowlabError(Exception):
    """Base class for all growlab errors."""


class ConfigError(GrowlabError):
    """Invalid configuration: unknown keys, bad types, out-of-range values."""


class ShapeError(GrowlabError):
    """Array shapes incompatible with the requested operation."""


class MaskError(GrowlabError):
    """Invalid mask: values outside [0, 1] or all-zero weight where forbidden."""


class GradientError(GrowlabError):
    """Non-finite gradients or a malformed backward graph."""


class GrowthError(GrowlabError):
    """Invalid growth request or failed function-preservation verification."""


class CheckpointFormatError(GrowlabError):
    """Checkpoint file cannot be parsed or has an unsupported version."""


class ChecksumError(CheckpointFormatError):
    """Checkpoint payload does not match its recorded checksum."""


class TrainingDiverged(GrowlabError):
    """Loss became non-finite during training.

    Carries the last finite-loss checkpoint so callers can recover.
    """

    def __init__(self, message, checkpoint=None):
        super().__init__(message)
        self.checkpoint = checkpoint
