"""Exception types shared across the package, mapped to CLI exit codes."""


class BcqError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ValidationError(BcqError):
    """Bad configuration or arguments (CLI exit 2)."""

    exit_code = 2


class DataError(BcqError):
    """Unusable input data (CLI exit 3)."""

    exit_code = 3


class BadMagic(DataError):
    """File does not start with the expected container magic."""


class TruncatedPayload(DataError):
    """Container payload does not match what the header promises."""


class NonFiniteInput(DataError):
    """Tensor payload contains NaN or Inf."""


class EmptyTensor(DataError):
    """Tensor with no scalars (empty shape or a zero-length dimension)."""


class ShapeMismatch(DataError):
    """Shape metadata inconsistent with the number of scalars."""


class NotMultiple(ValidationError):
    """Array length is not a multiple of the block length."""


class FamilyMismatch(BcqError):
    """Encoded stream references a different codebook family (CLI exit 4)."""

    exit_code = 4


class CorruptStream(BcqError):
    """Encoded stream is malformed or truncated (CLI exit 5)."""

    exit_code = 5
