"""Exception taxonomy shared across the package."""


class VrwkvError(Exception):
    """Base class for all package-specific errors."""


class DimensionError(VrwkvError, ValueError):
    """Operand shapes do not agree."""


class ContractionError(VrwkvError, ValueError):
    """A decay factor left the open interval (0, 1)."""


class UnsupportedOpError(VrwkvError, KeyError):
    """Backward dispatch received an unknown operation id."""


class ConfigError(VrwkvError, ValueError):
    """Parameters or variant flags are inconsistent with the configuration."""


class StateError(VrwkvError, ValueError):
    """Recurrent state does not match the model configuration."""


class DegenerateNormError(VrwkvError, ValueError):
    """Normalization requested over fewer than two channels."""


class LayoutError(VrwkvError, ValueError):
    """Prompt or scan layout is inconsistent (span sizes, missing pieces)."""


class EmptyTargetError(VrwkvError, ValueError):
    """Loss requested over a mask with no target positions."""


class NumericError(VrwkvError, ValueError):
    """A non-finite value appeared where finite numbers are required."""


class CheckpointFormatError(VrwkvError, ValueError):
    """Checkpoint header, version, or tensor table is malformed."""


class CheckpointCorruptError(VrwkvError, ValueError):
    """Checkpoint payload ends early or fails structural validation."""
