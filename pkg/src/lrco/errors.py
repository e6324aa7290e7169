"""Exception types shared across the package."""


class LrcoError(Exception):
    """Base class for all package-specific failures."""


class DegenerateFeatureError(LrcoError):
    """A vector with (near-)zero norm reached an operation that needs a direction."""


class ShapeMismatchError(LrcoError):
    """Array shapes are inconsistent with the model or operation contract."""


class DatasetFormatError(LrcoError):
    """A dataset file is malformed; message carries the offending line number."""


class ConfigError(LrcoError):
    """A run configuration is invalid (unknown key, bad value, bad combination)."""


class TrainingDivergedError(LrcoError):
    """A training step produced a non-finite loss; message carries diagnostics."""
