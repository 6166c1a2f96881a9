"""Exception types shared across the package."""


class TwistSMCError(Exception):
    """Base class for all package errors."""


class InputDomainError(TwistSMCError, ValueError):
    """An argument lies outside the domain an operation accepts."""


class CapacityError(TwistSMCError):
    """Exact enumeration was requested on an instance that is too large."""


class DegeneracyError(TwistSMCError):
    """Every importance weight collapsed, so no normalized weights exist."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class StarvationError(TwistSMCError):
    """Rejection sampling exhausted its attempt budget."""


class DegenerateBatchError(TwistSMCError):
    """A reward batch has zero spread, so group advantages are undefined."""


class ConfigError(TwistSMCError, ValueError):
    """A configuration file is malformed or inconsistent."""
