"""Exception types shared across the package."""


class CotrainlabError(Exception):
    """Base class for all library errors."""


class DimensionError(CotrainlabError, ValueError):
    """Array shapes or index ranges do not line up."""


class NumericError(CotrainlabError, ValueError):
    """Non-finite or otherwise invalid numeric input."""


class FormatError(CotrainlabError, ValueError):
    """A binary file does not match its declared layout.

    Carries the byte offset at which decoding failed.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class AlignmentError(CotrainlabError, ValueError):
    """Paired views disagree on instance count or labels."""


class StaleTraceError(CotrainlabError, RuntimeError):
    """A forward trace is replayed against updated parameters."""


class ConfigError(CotrainlabError, ValueError):
    """An experiment configuration failed validation."""


class UnlabeledPoolExhausted(CotrainlabError):
    """Terminal signal: no unlabeled instances remain to pseudo-label."""
