from typing import Optional, Union
from pathlib import Path

# --- EXIT CODES ---
EXIT_OK = 0
EXIT_GENERIC = 1
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_FORMAT = 4
EXIT_NUMERIC = 5
EXIT_DATASET = 6


class AkhcrError(Exception):
    """Base class for every error the stack raises on purpose."""
    exit_code = EXIT_GENERIC


class ShapeError(AkhcrError, ValueError):
    exit_code = EXIT_USAGE


class NumericError(AkhcrError, ArithmeticError):
    exit_code = EXIT_NUMERIC


class ConfigError(AkhcrError, ValueError):
    exit_code = EXIT_USAGE


class RangeError(AkhcrError, ValueError):
    exit_code = EXIT_USAGE


class UsageError(AkhcrError, RuntimeError):
    exit_code = EXIT_USAGE


class BatchTooSmallError(AkhcrError, ValueError):
    exit_code = EXIT_USAGE


class SplitError(AkhcrError, ValueError):
    exit_code = EXIT_DATASET


class DatasetIOError(AkhcrError, OSError):
    exit_code = EXIT_IO


class FormatError(AkhcrError, ValueError):
    """
    Undecodable input. Carries the file path and, for binary formats,
    the byte offset where parsing stopped.
    """
    exit_code = EXIT_FORMAT

    def __init__(self, message: str, path: Optional[Union[str, Path]] = None,
                 offset: Optional[int] = None):
        self.path = str(path) if path is not None else None
        self.offset = offset
        details = []
        if self.path is not None:
            details.append(f"path={self.path}")
        if offset is not None:
            details.append(f"offset={offset}")
        suffix = f" ({', '.join(details)})" if details else ""
        super().__init__(f"{message}{suffix}")
