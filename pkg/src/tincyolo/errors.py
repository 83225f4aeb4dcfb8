"""Exception hierarchy shared by all tincyolo modules."""


class TincyoloError(Exception):
    """Base class for every error raised by this package."""


class GeometryError(TincyoloError):
    """Dimensions are invalid or do not fit together (bad shapes, empty axes,
    non-positive output sizes, mismatched inner dimensions)."""


class BoundsError(TincyoloError, IndexError):
    """An element index is outside its tensor."""


class ConfigError(TincyoloError):
    """A network config is malformed or inconsistent.

    Carries the 1-based source line when known.
    """

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class WeightFormatError(ConfigError):
    """A weight file or directory does not match the network it claims to parameterize."""


class TransformError(TincyoloError):
    """A topology transform was applied to a network it does not fit."""


class RegistryError(TincyoloError):
    """Offload backend registration or lookup failed."""


class BackendContractError(TincyoloError):
    """An offload backend violated its life-cycle or output contract."""


class PipelineError(TincyoloError):
    """A pipeline stage failed; names the stage and the frame sequence number."""

    def __init__(self, stage_label, frame_seq, cause=None):
        super().__init__(f"stage '{stage_label}' failed on frame {frame_seq}: {cause}")
        self.stage_label = stage_label
        self.frame_seq = frame_seq


class ConfigWarning(UserWarning):
    """Non-fatal config issue (unknown key, ignored section content)."""
