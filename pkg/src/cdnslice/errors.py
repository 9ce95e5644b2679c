"""Exception types shared across the package."""

from __future__ import annotations


class CdnSliceError(Exception):
    """Base class for all errors raised by cdnslice."""


class InvalidQoeTarget(CdnSliceError, ValueError):
    pass


class ParseError(CdnSliceError, ValueError):
    pass


class ValidationError(CdnSliceError, ValueError):
    pass


class UnknownFlavor(CdnSliceError, KeyError):
    pass


class TooLarge(CdnSliceError):
    """Brute-force enumeration would exceed the configured combination cap."""


class BudgetExceeded(CdnSliceError):
    """Branch and bound hit its node limit without any incumbent."""


class CapacityError(CdnSliceError):
    pass


class StaleDecision(CdnSliceError):
    pass


class OutOfRange(CdnSliceError, ValueError):
    pass


class AlreadyLowest(CdnSliceError):
    pass


class ResourceUnavailable(CdnSliceError):
    pass


class ConfigError(CdnSliceError, ValueError):
    pass
