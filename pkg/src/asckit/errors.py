"""Exception types shared across the toolkit."""


class AsckitError(Exception):
    """Base class for all toolkit errors."""


class InvalidInputError(AsckitError):
    """Raised when runtime data violates an operation's preconditions."""


class InvalidConfigError(AsckitError):
    """Raised when a configuration or network description is inconsistent."""


class DataFormatError(AsckitError):
    """Raised when an on-disk artifact (manifest, archive, CSV) fails to parse."""


class UpstreamUnavailableError(AsckitError):
    """Raised when the up-stream embedding model cannot be reached; retryable."""
