"""Exception types shared across the package.

The CLI maps ConfigError to exit code 2 and numerical failures
(OracleError, non-finite losses) to exit code 3.
"""


class ShapeError(ValueError):
    """Raised when tensor shapes are incompatible for an operation."""


class ConfigError(ValueError):
    """Raised for invalid configuration values or unknown config keys."""


class OracleError(RuntimeError):
    """Raised when a numerical check cannot be evaluated (e.g. non-finite loss)."""


class UndefinedAngleError(ValueError):
    """Raised when a turn angle is requested for a zero-length direction vector."""


class IngestError(RuntimeError):
    """Raised when an external dataset directory is missing required files."""
