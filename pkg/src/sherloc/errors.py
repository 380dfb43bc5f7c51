"""Exception types shared across the package."""


class SherlocError(Exception):
    """Base class for all errors raised by this package."""


class DomainError(SherlocError, ValueError):
    """An input is outside its documented domain (message range, grid bounds, ...)."""


class ZeroPlaintextError(DomainError):
    """Zero was passed to the multiplicative scheme, which cannot hide it.

    Callers that legitimately need to carry zero must use the blinded pair
    encoding instead of a raw multiplicative ciphertext.
    """


class CiphertextError(SherlocError):
    """A ciphertext is degenerate: a component is out of range or not invertible."""


class KeyIntegrityError(SherlocError):
    """Key material fails an internal consistency requirement."""


class KeyGenError(SherlocError):
    """Key generation did not produce acceptable parameters within the retry budget."""


class SwitchRetry(SherlocError):
    """A switching exchange hit non-invertible randomness; retry with fresh values."""


class ProtocolError(SherlocError):
    """A message violates framing, sequencing or per-exchange state rules."""


class StageError(ProtocolError):
    """A message arrived in a session stage where it is not allowed."""


class SessionAborted(ProtocolError):
    """The peer aborted the session (or we did, on its behalf)."""

    def __init__(self, reason: str, stage: str = "?"):
        super().__init__(f"session aborted in stage {stage!r}: {reason}")
        self.reason = reason
        self.stage = stage


class RecommendationAborted(SherlocError):
    """The encrypted recommendation loop failed; no partial result is released."""


class OracleMismatch(SherlocError):
    """A benchmarked encrypted result disagreed with the plaintext reference."""
