from typing import Optional


class SextortionForensicsError(Exception):
    """Root of every error raised by the toolkit. `exit_code` is what the CLI returns."""

    exit_code: int = 1


class ConfigError(SextortionForensicsError):
    exit_code = 2


class DataError(SextortionForensicsError):
    exit_code = 3


class SchemaError(DataError):
    def __init__(self, message: str, line: Optional[int] = None, source: Optional[str] = None):
        self.line = line
        self.source = source
        where = ""
        if source:
            where = f"{source}:"
        if line is not None:
            where = f"{where}{line}: "
        elif where:
            where = f"{where} "
        super().__init__(f"{where}{message}")


class DuplicateEmail(DataError):
    pass


class DuplicateTransaction(DataError):
    pass


class DoubleSpend(DataError):
    pass


class MissingPrice(DataError):
    pass


class MissingRate(DataError):
    pass


class GroupTooSmall(DataError):
    pass


class DegenerateVariance(DataError):
    pass


class InvariantViolation(SextortionForensicsError):
    exit_code = 4


class StageError(SextortionForensicsError):
    """A pipeline stage failed; keeps the stage name and the original cause."""

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", InvariantViolation.exit_code)
        super().__init__(f"{stage}: {cause}")
