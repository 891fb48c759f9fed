"""Exception hierarchy shared by every module.

Input problems subclass :class:`ValueError` and numerical failures subclass
:class:`ArithmeticError`, so callers that do not care about the package can
still catch them generically. The CLI maps the two families to exit codes 2
and 3.
"""

from __future__ import annotations


class SnfgpError(Exception):
    """Base class for all package errors."""


class InputError(SnfgpError, ValueError):
    """Invalid arguments, shapes, configuration or files."""


class NumericalError(SnfgpError, ArithmeticError):
    """A numerical routine failed (non-finite values, factorization failure)."""


class TrainingError(NumericalError):
    """Training diverged. Carries the position and the partial trace."""

    def __init__(self, message: str, epoch: int, batch: int, trace=None):
        super().__init__(f"{message} (epoch {epoch}, batch {batch})")
        self.epoch = epoch
        self.batch = batch
        self.trace = trace


class InferenceError(NumericalError):
    """Inverse inference could not evaluate the likelihood anywhere on the grid."""


class ArchiveError(InputError):
    """Base class for model archive problems."""


class CorruptArchiveError(ArchiveError):
    """The archive is truncated or its bytes do not match the header."""


class VersionMismatchError(ArchiveError):
    """The archive declares a format version this code cannot read."""


class InvariantError(ArchiveError):
    """The archive decoded cleanly but its contents are inconsistent."""

    def __init__(self, field: str, message: str):
        super().__init__(f"invariant violated for '{field}': {message}")
        self.field = field


class DatasetFormatError(InputError):
    """A dataset file could not be parsed."""

    def __init__(self, message: str, path=None, line: int | None = None):
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)
        self.path = path
        self.line = line
