"""Exception hierarchy shared across the medaid package."""


class MedaidError(Exception):
    """Base class for all errors raised by this package."""


class CorpusParseError(MedaidError):
    """Malformed source file; carries the byte offset of the failure."""

    def __init__(self, message: str, offset: int | None = None):
        super().__init__(message)
        self.offset = offset


class CorpusStructureError(MedaidError):
    """Structurally invalid dialogue entry; names the offending dialog key."""

    def __init__(self, message: str, dialog_key: str | None = None):
        super().__init__(message)
        self.dialog_key = dialog_key


class ValidationError(MedaidError):
    """A domain invariant does not hold (empty utterance, bad score, ...)."""


class CatalogError(MedaidError):
    """Unknown disease or unusable disease catalog."""


class GenerationRejected(MedaidError):
    """A model output failed validation; `reason` is machine-readable."""

    FORMAT = "format"
    LENGTH = "length"
    COHERENCE = "coherence"

    def __init__(self, message: str, reason: str):
        super().__init__(message)
        self.reason = reason


class CredentialError(MedaidError):
    """Missing or rejected API credentials; never retried."""


class TransportError(MedaidError):
    """Retries exhausted; carries the last HTTP status (None for network failures)."""

    def __init__(self, message: str, status: int | None = None):
        super().__init__(message)
        self.status = status


class ProtocolError(MedaidError):
    """The endpoint answered with a body we cannot interpret."""


class TranslationError(MedaidError):
    """Translation produced no usable text."""


class MalformedPrediction(MedaidError):
    """A diagnosis marker was emitted but the payload did not parse."""


class SessionStateError(MedaidError):
    """Operation not legal in the session's current state."""


class SignatureMismatch(MedaidError):
    """MinHash signatures with different (n, seed) cannot be compared."""


class InsufficientData(MedaidError):
    """Not enough annotations to estimate agreement."""


class StoreNotFound(MedaidError):
    """No session snapshot under the given id."""


class StoreConflict(MedaidError):
    """A second writer tried to lease a session id already held."""


class JobPaused(MedaidError):
    """A batch job stopped early; its checkpoint is intact and resumable."""
