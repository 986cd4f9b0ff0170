"""Exception types raised across the package."""

from __future__ import annotations


class LifeJournalError(Exception):
    """Base class for all package errors."""


# trace
class MalformedRecord(LifeJournalError):
    def __init__(self, line_no: int, reason: str) -> None:
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no
        self.reason = reason


class NonMonotonicTime(LifeJournalError):
    def __init__(self, line_no: int, start_time: float, previous: float) -> None:
        super().__init__(
            f"line {line_no}: start_time {start_time} is earlier than previous burst at {previous}"
        )
        self.line_no = line_no


class InsufficientSamples(LifeJournalError):
    pass


class PressureOutOfRange(LifeJournalError):
    pass


class MissingBarometer(LifeJournalError):
    pass


class MissingMotionSource(LifeJournalError):
    pass


# geo
class InvalidCoordinate(LifeJournalError):
    pass


class StorageIo(LifeJournalError):
    pass


# providers (shared by geo and llm)
class ProviderUnavailable(LifeJournalError):
    pass


class TransportError(LifeJournalError):
    """A single failed attempt to reach a provider; retried by callers."""


class MissingFixture(LifeJournalError):
    def __init__(self, key: str, where: str = "") -> None:
        msg = f"no fixture for {key}"
        if where:
            msg += f" in {where}"
        super().__init__(msg)
        self.key = key


# llm
class ImageMismatch(LifeJournalError):
    pass


class UnboundPlaceholder(LifeJournalError):
    def __init__(self, names: list[str]) -> None:
        super().__init__("unbound placeholder(s): " + ", ".join(names))
        self.names = names


class MissingPrice(LifeJournalError):
    pass


# journal / eval / cli
class EmptyHorizon(LifeJournalError):
    pass


class EmptyText(LifeJournalError):
    pass


class InvalidScenario(LifeJournalError):
    pass


class ConfigError(LifeJournalError):
    pass
