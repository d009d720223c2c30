"""Error types shared across the package.

Plain ValueError is used for bad arguments and shape mismatches; the classes
here cover failure modes that callers may want to catch separately.
"""


class FormatError(Exception):
    """A binary file does not match the expected wire format."""


class UnsupportedVersionError(FormatError):
    """A binary file has a valid magic but an unknown version."""


class ConfigError(ValueError):
    """A configuration is internally inconsistent (e.g. weight shapes vs. architecture)."""


class TrainingError(RuntimeError):
    """Training hit a non-recoverable numeric problem (non-finite gradients)."""


class ResourceError(RuntimeError):
    """An operation would exceed a configured resource budget."""


class StateError(RuntimeError):
    """An object was used before required state was attached."""
