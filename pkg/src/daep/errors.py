"""Exception hierarchy shared across the package.

Exit-code mapping used by the CLI: ValidationError (and subclasses) -> 2,
DivergenceError -> 4, any other DaepError -> 3.
"""


class DaepError(Exception):
    """Base class for all package errors."""


class ValidationError(DaepError):
    """Precondition or invariant violation on user-supplied data or config."""


class FormatError(ValidationError):
    """A file failed to parse; message names the offending record/line."""


class EmptySequenceError(ValidationError):
    """An operation produced or received a sequence with no measurements."""


class DivergenceError(DaepError):
    """Training hit a non-finite loss; carries a diagnostic snapshot path."""

    def __init__(self, message: str, snapshot_path: str | None = None):
        super().__init__(message)
        self.snapshot_path = snapshot_path
