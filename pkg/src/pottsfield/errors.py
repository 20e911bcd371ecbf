"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: ConfigError -> 1,
DataError (and subclasses) -> 2, NumericError -> 3.
"""


class PottsFieldError(Exception):
    """Base class for all package errors."""


class ConfigError(PottsFieldError):
    """Invalid specification, configuration, or argument combination."""


class DataError(PottsFieldError):
    """Inconsistent or malformed data (shape mismatches, empty classes, ...)."""


class FormatError(DataError):
    """On-disk format violation (bad magic, malformed header, ...)."""


class ChecksumError(FormatError):
    """Payload bytes do not match the header checksum."""


class NumericError(PottsFieldError):
    """Numerical failure (non-finite values where finite ones are required)."""
