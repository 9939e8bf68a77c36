"""Exception types shared across the engine."""


class RogerError(Exception):
    """Base class for engine errors."""


class ConfigurationError(RogerError):
    """Invalid or inconsistent configuration."""


class DataError(RogerError):
    """Dataset or file-format problem."""


class DivergenceError(RogerError):
    """Optimization diverged beyond recoverable bounds."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class ProtocolError(RogerError):
    """Wire-protocol violation when talking to the enhancement sidecar."""
