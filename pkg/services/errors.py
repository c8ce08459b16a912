"""Exception hierarchy shared by every mobgap service"""


class MobgapError(Exception):
    """Base error; exit_code is what the CLI returns when it escapes"""
    exit_code = 4


class ConfigError(MobgapError):
    exit_code = 2


class ConfigParseError(ConfigError):
    pass


class DataError(MobgapError):
    exit_code = 3


# feeds
class MalformedDocument(DataError):
    pass


class MissingField(MalformedDocument):
    pass


class MissingTable(DataError):
    pass


class DanglingReference(DataError):
    pass


class NonMonotonicStopTimes(DataError):
    pass


# ingest
class ArchiveWriteFailure(DataError):
    pass


class UnknownVendor(DataError):
    pass


class NoCoverage(DataError):
    pass


class InvalidWindow(DataError):
    pass


# tripinfer
class UnsortedStream(DataError):
    pass


class MixedVendors(DataError):
    pass


# supply
class UnknownStop(DataError):
    pass


class DegenerateGrid(DataError):
    pass


class GridMismatch(DataError):
    pass


class ZeroVariance(DataError):
    pass


# router / classify
class Unreachable(DataError):
    pass


class NoAlternative(DataError):
    pass


class EmptyInput(DataError):
    pass


class StageError(MobgapError):
    """Wraps a failure with the pipeline stage it happened in"""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, 'exit_code', 4)
        super().__init__(f"[{stage}] {cause}")
