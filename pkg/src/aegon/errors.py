"""Exception types shared across the broker, edge and auditor."""


class AegonError(Exception):
    """Base class. ``code`` is the machine-readable error_code on the wire."""

    code = "error"

    def __init__(self, message: str = "", code: str | None = None):
        super().__init__(message or self.code)
        if code is not None:
            self.code = code


class EncodingError(AegonError, ValueError):
    code = "encoding_error"


class ValidationError(AegonError, ValueError):
    code = "validation_error"


class NotFoundError(AegonError, LookupError):
    code = "not_found"


class ConflictError(AegonError):
    code = "conflict"


class OutOfRangeError(AegonError, IndexError):
    code = "out_of_range"


class ProofFormatError(AegonError, ValueError):
    code = "format_error"


class KeyUnavailableError(AegonError):
    code = "key_unavailable"


class CorruptLogError(AegonError):
    code = "corrupt_log"


class ReplayError(AegonError):
    code = "replay"


class Rejected(AegonError):
    """A verification step refused its input; ``reason`` names the failed check."""

    code = "rejected"

    def __init__(self, reason: str, message: str = ""):
        super().__init__(message or reason)
        self.reason = reason
