"""Exception hierarchy shared by all siamnet modules.

The CLI maps these onto exit codes: usage errors -> 1, data/protocol
errors -> 2, numerical failures -> 3.
"""


class SiamnetError(Exception):
    """Base class for all package errors."""


class UsageError(SiamnetError):
    """Caller misused an API: stale cache, empty gallery, bad argument."""


class DataError(SiamnetError):
    """Problem with input data or files."""


class ProtocolError(DataError):
    """Split/evaluation protocol precondition violated."""


class UnusableDatasetError(ProtocolError):
    """Dataset cannot support training at all (e.g. a single subject)."""


class DegenerateBatchError(DataError):
    """A batch has no positive or no negative pairs; trainer must resample."""


class FormatError(DataError):
    """Malformed model file or manifest."""


class DimensionError(SiamnetError):
    """Tensor shape mismatch; message names the offending axis."""


class NumericalError(SiamnetError):
    """Numerical failure: non-finite values, gradient-check breach."""


class SingularInputError(NumericalError):
    """A zero-norm feature column reached the cosine connection."""


class DegenerateVarianceError(NumericalError):
    """All considered similarities equal; Fisher denominator is zero."""
