"""Exception classes raised across the package.

Every class carries an ``exit_code`` used by the command-line interface, so
the mapping from failure kind to process status lives next to the failure.
"""

from __future__ import annotations


class SleepRulesError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(SleepRulesError, ValueError):
    exit_code = 2


class ParseError(SleepRulesError, ValueError):
    """Malformed EDF header; ``offset`` is the byte offset of the bad field."""

    exit_code = 3

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class TruncationError(SleepRulesError, ValueError):
    exit_code = 4


class EmptyRecordingError(SleepRulesError, ValueError):
    exit_code = 5


class ProfileError(SleepRulesError):
    exit_code = 6


class DetectorError(SleepRulesError):
    exit_code = 7


class AlignmentError(SleepRulesError, ValueError):
    exit_code = 8


class NoSleepError(SleepRulesError):
    exit_code = 9


class EpochIndexError(SleepRulesError, IndexError):
    exit_code = 10


class RecipeError(SleepRulesError, ValueError):
    exit_code = 11


class CalibrationError(SleepRulesError, ValueError):
    exit_code = 12


class CatalogError(SleepRulesError, KeyError):
    exit_code = 13

    def __str__(self) -> str:
        # KeyError quotes its argument; keep messages readable.
        return str(self.args[0]) if self.args else ""


class AmbiguousRoleError(SleepRulesError):
    exit_code = 14


class TooShortError(SleepRulesError, ValueError):
    exit_code = 15


class InsufficientDataError(SleepRulesError, ValueError):
    exit_code = 16


class BandError(SleepRulesError, ValueError):
    exit_code = 17


class EmptyError(SleepRulesError, ValueError):
    exit_code = 18


class DegenerateError(SleepRulesError, ValueError):
    exit_code = 19
