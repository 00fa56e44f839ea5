"""Exception types shared across modules."""


class KeyDeficitError(ValueError):
    """Raised when a key chain does not expose enough flip seeds for a class."""


class ShapeMismatchError(ValueError):
    pass


class RankDeficientError(ValueError):
    pass


class InapplicableBoundError(ValueError):
    """A bound was requested outside the hypotheses that make it valid.

    Kept distinct from plain numeric errors: callers usually report it
    as an outcome rather than abort.
    """
