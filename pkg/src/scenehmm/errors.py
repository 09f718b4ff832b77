"""Exception hierarchy shared by all pipeline stages."""


class ScenehmmError(Exception):
    """Base class for every error raised by this package."""


class FormatError(ScenehmmError, ValueError):
    """Malformed file header or structure."""


class TruncationError(FormatError):
    """File ended before all pixel data was read."""


class UnsupportedDepthError(FormatError):
    """Sample depth above 8 bits."""


class UnsupportedFormatError(FormatError):
    """Valid file using a feature this decoder does not handle."""


class CorruptionError(FormatError):
    """Checksum mismatch."""


class DimensionError(ScenehmmError, ValueError):
    """Array or image has an unusable shape."""


class ParameterError(ScenehmmError, ValueError):
    """Argument outside its admissible range."""


class DatasetError(ScenehmmError):
    """Dataset layout or class coverage problem."""


class CoverageError(DatasetError):
    """A class is missing from data that must cover all classes."""


class AlignmentError(ScenehmmError):
    """Score tensors or features refer to different image ids."""


class ConfigError(ScenehmmError, ValueError):
    """Invalid pipeline configuration."""


class ConvergenceError(ScenehmmError, RuntimeError):
    """Iterative solver failed to converge."""


class ArtifactError(ScenehmmError):
    """A persisted artifact is missing or inconsistent."""


class DatasetWarning(UserWarning):
    """Emitted for files skipped while loading a dataset."""
