"""Exception types raised across the pipeline."""


class LongTmleError(Exception):
    """Base class for all package errors."""


class SchemaError(LongTmleError, ValueError):
    """Input does not match the expected columns or types."""


class PositivityError(LongTmleError):
    """No (weighted) at-risk mass is available at some interval."""

    def __init__(self, message, k=None):
        super().__init__(message)
        self.k = k


class StateSpaceError(LongTmleError):
    """Exact enumeration is impossible or too large for the configured budget."""
