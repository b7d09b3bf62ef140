"""Exception hierarchy shared by all mmproto modules.

CLI exit-code mapping lives in cli.py: configuration problems exit 2,
capacity/data problems exit 3, numerical divergence exits 4.
"""


class MmprotoError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(MmprotoError):
    """Invalid hyperparameter, mode, or option combination."""


class UsageError(MmprotoError):
    """An API was called in a way its contract forbids."""


class DimensionError(MmprotoError):
    """Tensor or array shapes are incompatible for the requested op."""


class CapacityError(MmprotoError):
    """A split or class does not hold enough videos/classes for the request."""


class NumericError(MmprotoError):
    """A forward operation produced NaN or Inf (error state, never emitted)."""


class DivergenceError(MmprotoError):
    """Training produced a non-finite loss; message names the failing step."""


class UndefinedSimilarityError(MmprotoError):
    """Cosine similarity requested against a zero-norm vector."""


class PartitionError(ConfigurationError):
    """Base/val/novel class lists do not partition the store's classes."""


class StoreError(MmprotoError):
    """Base class for embedding-store I/O problems."""


class StoreFormatError(StoreError):
    """Bad magic bytes or unsupported version in a store payload."""


class StoreTruncationError(StoreError):
    """Payload ended before the declared arrays were read."""


class StoreChecksumError(StoreError):
    """CRC32 recorded in the payload does not match its content."""


class StoreValidationError(StoreError):
    """A manifest/record invariant is violated; message names the field."""
