"""Exception hierarchy shared across the package.

ConfigError maps to CLI exit code 2, DataError (and subclasses) to exit
code 3.
"""


class CrossregError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(CrossregError, ValueError):
    """Invalid configuration value or combination."""


class DataError(CrossregError, ValueError):
    """Input data violates a precondition (empty, degenerate, malformed)."""


class PlyParseError(DataError):
    """Malformed ASCII PLY content."""


class DegenerateGeometryError(DataError):
    """Geometry too degenerate for the requested operation."""


class RegistrationError(CrossregError, RuntimeError):
    """Numerical failure inside an iterative registration."""


class StageError(CrossregError, RuntimeError):
    """Pipeline stage failure; carries the stage label."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
