from __future__ import annotations


class CascadeError(Exception):
    """Base class for failures the command line maps onto an exit code."""

    exit_code = 1


class ConfigError(CascadeError, ValueError):
    exit_code = 2


class DistributionParseError(ConfigError):
    """A distribution literal could not be parsed.

    `position` is the 0-based character offset where parsing failed.
    """

    def __init__(self, msg: str, *, position: int) -> None:
        super().__init__(f"{msg} (at position {position})")
        self.position = position


class EngineMismatchError(ConfigError):
    pass


class ResourceLimitError(CascadeError):
    exit_code = 3


class PreconditionError(CascadeError):
    pass


class TotallyCriticalError(PreconditionError):
    pass


class DomainError(CascadeError, ArithmeticError):
    pass


class DegenerateWindowError(CascadeError, ValueError):
    pass
