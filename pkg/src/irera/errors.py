"""Exception types shared across the engine."""

from __future__ import annotations


class IreraError(Exception):
    """Base class for all engine errors."""


class ConfigError(IreraError):
    """Invalid run configuration; message lists every offending key."""


class MissingInputField(IreraError):
    def __init__(self, field: str):
        super().__init__(f"prompt input is missing declared input field {field!r}")
        self.field = field


class MissingOutputField(IreraError):
    def __init__(self, field: str):
        super().__init__(f"completion does not contain output field {field!r}")
        self.field = field


class TransportError(IreraError):
    """Upstream backend unreachable or returned a retryable failure."""


class MalformedResponse(IreraError):
    """Upstream backend answered, but not in the expected shape."""


class UnknownInput(IreraError):
    """A scripted backend received a prompt it has no transcript for."""


class DimensionMismatch(IreraError):
    pass


class EmptyQuerySet(IreraError):
    pass


class NegativePriorStrength(IreraError):
    pass


class NonFiniteScore(IreraError):
    pass


class LengthMismatch(IreraError):
    pass


class KNonPositive(IreraError):
    pass


class NoUsableTraces(IreraError):
    pass


class MalformedRecord(IreraError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


class EmptyDataset(IreraError):
    pass


class DuplicateLabelName(IreraError):
    pass


class PriorOutOfRange(IreraError):
    pass
