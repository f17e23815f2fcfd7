"""Exception hierarchy shared across the engine.

Each class maps to one CLI exit code; see cli.EXIT_CODES.
"""


class QuantProxyError(Exception):
    """Base class for engine errors."""


class UsageError(QuantProxyError):
    """Bad flags or mutually inconsistent options (exit 1)."""


class DataError(QuantProxyError):
    """Unreadable or malformed input data (exit 2)."""


class ModelFormatError(DataError):
    """Interchange file violates the format contract.

    `context` names the offending field or layer so callers can print a
    single-line diagnostic pointing at the problem.
    """

    def __init__(self, message: str, context: str = ""):
        self.context = context
        super().__init__(f"{context}: {message}" if context else message)


class InfeasibleBudgetError(QuantProxyError):
    """Compression target cannot be met even at menu minimums (exit 3)."""


class EndpointError(QuantProxyError):
    """Generation endpoint unreachable and no fallback configured (exit 4)."""


class ExprError(DataError):
    """Proxy expression rejected by the parser."""

    def __init__(self, message: str, position: int = -1):
        self.position = position
        if position >= 0:
            message = f"{message} (at position {position})"
        super().__init__(message)
