"""Exception types shared across the package."""


class XencError(Exception):
    """Base class for all errors raised by this package."""


class ArgError(XencError):
    """Caller passed arguments violating an operation's preconditions."""


class DataError(XencError):
    """Numeric payload violates an invariant (NaN/Inf, bad range)."""


class FormatError(XencError):
    """On-disk store has a bad magic, version, or dtype code."""


class CorruptError(XencError):
    """Store manifest and payload disagree (size, dims)."""


class IoError(XencError):
    """Filesystem-level failure while reading or writing a store."""


class TrialError(XencError):
    """A permutation trial failed repeatedly and cannot be retried."""
