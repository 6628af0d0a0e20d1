"""Exception types shared across the package.

Every error raised on purpose derives from IdnError so callers (and the CLI)
can distinguish expected failures from genuine bugs.
"""


class IdnError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(IdnError):
    """Tensor shapes (or dtypes) are incompatible with the requested operation."""


class ConfigError(IdnError):
    """An architecture or run configuration violates its invariants."""


class StateError(IdnError):
    """An operation was invoked in an invalid order (e.g. backward before forward)."""


class UsageError(IdnError):
    """Arguments are structurally valid but semantically unusable."""


class DataError(IdnError):
    """A corpus, image file, or checkpoint could not be read or is malformed."""


class DivergenceError(IdnError):
    """Training produced a non-finite loss."""
