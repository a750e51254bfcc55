"""Exception hierarchy shared across the package."""


class RdrnetError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(RdrnetError):
    """A tensor dimension does not satisfy an operation's contract.

    ``axis`` names the offending axis ("batch", "channel", "height",
    "width") so callers can report which part of a shape went wrong.
    """

    def __init__(self, message, axis=None):
        super().__init__(message)
        self.axis = axis


class ContractError(RdrnetError):
    """A structural precondition was violated (wrong stride, wrong mode, ...)."""


class ConfigError(RdrnetError):
    """A configuration file failed schema validation.

    ``line`` is the 1-based line number the violation was detected on,
    or None when the problem is file-level (e.g. a missing key).
    """

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class StoreError(RdrnetError):
    """Base class for weight-store serialization failures."""


class BadMagicError(StoreError):
    """The file does not start with the expected magic bytes."""


class VersionError(StoreError):
    """The store was written with an unsupported format version."""


class ChecksumError(StoreError):
    """The trailing CRC32 does not match the file contents."""


class TruncatedError(StoreError):
    """The file ended before the declared contents were read."""


class MissingTensorError(StoreError):
    """A named tensor slot required by the network is absent from the store."""
