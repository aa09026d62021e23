"""Exception taxonomy shared across the package.

Argument-domain violations raise ValueError subclasses so callers can catch
either the narrow class or plain ValueError; infrastructure failures
(wire format, channel integrity) get their own branches.
"""


class SplitLabError(Exception):
    """Base class for every error raised by this package."""


class ConfigurationError(SplitLabError, ValueError):
    """Unknown registry name, invalid experiment config, mismatched study arms."""


class ShapeError(SplitLabError, ValueError):
    """Tensor or vector shape does not match what the operation requires."""


class PartitionError(SplitLabError, ValueError):
    """Cut index outside the legal range for the model."""


class DataError(SplitLabError, ValueError):
    """Bad dataset: empty, labels out of range, degenerate value range,
    insufficient captured frames, or a target pool smaller than requested."""


class WireFormatError(SplitLabError, ValueError):
    """Malformed wire bytes: bad magic, unsupported version or dtype,
    truncated or trailing payload."""


class ChannelIntegrityError(SplitLabError, RuntimeError):
    """An active channel transform violated the tensor contract (shape change)."""
