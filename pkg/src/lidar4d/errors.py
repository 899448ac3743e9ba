"""Exception types shared across the package."""


class SchemaError(ValueError):
    """A structured record is malformed; ``field`` names the offending entry."""

    def __init__(self, field: str, message: str = ""):
        self.field = field
        detail = f": {message}" if message else ""
        super().__init__(f"invalid field '{field}'{detail}")


class FileFormatError(ValueError):
    """Base class for binary file format problems."""


class BadMagicError(FileFormatError):
    pass


class UnsupportedVersionError(FileFormatError):
    pass


class TruncatedPayloadError(FileFormatError):
    pass


class CountMismatchError(FileFormatError):
    pass


class PipelineStageError(RuntimeError):
    """Wraps a failure with the name of the pipeline stage that raised it."""

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {cause}")
