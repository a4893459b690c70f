"""Exception types shared across the package."""


class PrivtrendError(Exception):
    """Base class for package errors."""


class DealerExhausted(PrivtrendError):
    """A preprocessing tape ran out of correlated randomness."""


class IntegrityFailure(PrivtrendError):
    """A MAC check failed: some share was tampered with."""


class RangeViolation(PrivtrendError):
    """Inputs to a comparison exceed the protocol's valid range."""


class Refusal(PrivtrendError):
    """Budget refusal: the requested epsilon exceeds the remaining budget."""


class EpochDeleted(PrivtrendError):
    """The fine-grained store for this epoch has been permanently deleted."""


class InvalidAlpha(PrivtrendError):
    """Distortion parameter outside (0, 1)."""


class InvalidBudget(PrivtrendError):
    """Privacy parameters outside their valid domain."""


class OneTimeOnly(PrivtrendError):
    """The one-time coarse charge was already recorded."""


class DegenerateVector(PrivtrendError):
    """A projected vector has (near-)zero norm and cannot be renormalized."""


class EmptyMessage(PrivtrendError):
    """The toy embedder was handed an empty string."""


class MalformedBundle(PrivtrendError):
    """A donation bundle or wire frame failed validation."""


class PeerUnreachable(PrivtrendError):
    """A peer server could not be reached; the query was aborted unharmed."""


class ConfigMismatch(PrivtrendError):
    """Server configuration hashes disagree."""
