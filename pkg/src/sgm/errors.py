"""Shared exception types."""


class ConfigError(ValueError):
    """Bad user-supplied configuration (unknown name, invalid value, missing file)."""


class ParseError(ValueError):
    """Malformed on-disk artifact. Carries a 1-based line number when known."""

    def __init__(self, message, line=None):
        self.line = line
        super().__init__(message if line is None else f"line {line}: {message}")


class DivergenceError(RuntimeError):
    """Training loss blew past the abort threshold."""
