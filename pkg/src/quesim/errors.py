"""Exception types shared across the package.

The CLI maps ConfigError to exit status 1 and every other QuesimError
to exit status 2.
"""


class QuesimError(Exception):
    """Base class for all errors raised by quesim."""


class ConfigError(QuesimError):
    """Invalid configuration or argument value."""


class DataError(QuesimError):
    """Malformed or inconsistent input data."""


class NumericError(QuesimError):
    """Non-finite values appeared during a computation."""


class StaleDigestError(QuesimError):
    """A stage output no longer matches the digest recorded in the manifest."""


class StageError(QuesimError):
    """A pipeline stage failed; wraps the underlying cause."""

    def __init__(self, stage, cause):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause
