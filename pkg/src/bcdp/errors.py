"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Raised when inputs violate a documented invariant or precondition."""


class ParseError(ValueError):
    """Raised on malformed persisted data; carries the offending line number."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class NoPathError(RuntimeError):
    """Raised when the goal is unreachable from the queried cell."""
