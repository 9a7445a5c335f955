"""Exception hierarchy. Each family carries the CLI exit code it maps to."""


class SemvoxError(Exception):
    exit_code = 2


class ConfigError(SemvoxError):
    exit_code = 1


class DataError(SemvoxError):
    exit_code = 2


class NumericError(SemvoxError):
    exit_code = 3


class DegenerateIntrinsicsError(NumericError):
    pass


class InvalidDepthError(DataError):
    pass


class DimensionMismatchError(DataError):
    pass


class InvalidPointError(DataError):
    pass


class ClassOutOfRangeError(DataError):
    pass


class MalformedFileError(DataError):
    """A reader hit bad content. ``location`` names the line or byte offset."""

    def __init__(self, path, location, message):
        self.path = str(path)
        self.location = location
        super().__init__(f"{self.path} ({location}): {message}")


class MalformedHeaderError(MalformedFileError):
    pass


class SizeMismatchError(MalformedFileError):
    pass


class UnreadableFileError(DataError):
    pass


class UnwritablePathError(DataError):
    pass


class NonMonotonicTimestampsError(MalformedFileError):
    pass


class BadQuaternionError(MalformedFileError):
    pass


class EmptyOverlapError(NumericError):
    pass


class DegenerateAlignmentError(NumericError):
    pass


class InsufficientLengthError(NumericError):
    pass


class PathTooShortError(NumericError):
    pass
