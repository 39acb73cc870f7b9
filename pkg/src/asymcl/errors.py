"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Input violates a documented precondition or invariant."""


class DomainError(ValueError):
    """A numeric operation was asked to leave its domain (e.g. log of a non-positive value)."""


class DivergenceUndefinedError(ValueError):
    """An estimate assigns zero probability to an outcome the true distribution supports."""


class MetricUndefinedError(ValueError):
    """A metric cannot be computed, e.g. a recall over an empty class."""


class IdxFormatError(ValueError):
    """Malformed IDX file. ``offset`` is the byte position where parsing failed."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset
