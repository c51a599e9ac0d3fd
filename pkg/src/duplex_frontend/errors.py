"""Exception hierarchy shared across the toolkit.

The CLI maps the three top-level families onto exit codes: configuration
problems exit 1, bad input data exits 2, protocol violations exit 3.
"""

from __future__ import annotations


class DuplexError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(DuplexError, ValueError):
    pass


class DataError(DuplexError, ValueError):
    pass


class ProtocolViolation(DuplexError, ValueError):
    pass
