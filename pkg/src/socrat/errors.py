"""Exception hierarchy.

Everything raised on purpose by this package derives from SocratError, so
callers can catch one type at the CLI boundary and map it to an exit code.
"""
from __future__ import annotations


class SocratError(Exception):
    """Base class for all errors raised by socrat."""


class EmptySequenceError(SocratError):
    """Tokenizing produced no tokens (empty or whitespace-only input)."""


class FormatError(SocratError):
    """A file or wire payload did not match its documented format.

    Carries the offending path (or endpoint) and, when known, a 1-based
    line number.
    """

    def __init__(self, message: str, *, path: str | None = None, line: int | None = None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f" ({path}" + (f":{line}" if line is not None else "") + ")"
        super().__init__(message + where)


class MissingOriginalError(FormatError):
    """A perturbation file had no record marked as the original pair."""


class EmptyNeighborhoodError(SocratError):
    """No vocabulary word lies within the edit-distance budget of the input."""


class ExternalPerturberUnavailableError(SocratError):
    """The external perturbation service could not be reached."""


class ProtocolError(SocratError):
    """An external service answered, but not with what the protocol promises."""


class BlackBoxFailureError(SocratError):
    """The black box failed to answer a query batch.

    ``failing_index`` is the position of the first failing input within the
    batch, when it can be attributed; otherwise None.
    """

    def __init__(self, message: str, *, failing_index: int | None = None):
        self.failing_index = failing_index
        super().__init__(message)


class InfeasibleBoundsError(SocratError):
    """Cardinality bounds admit no valid partition for this graph."""


class InvalidKError(SocratError):
    """Requested subset count is outside the representable range."""
