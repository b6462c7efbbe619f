"""Typed errors shared across the package.

Each error class maps to one CLI exit code, so library failures surface
as stable statuses instead of tracebacks when running ``cadp``.
"""


class CadpError(Exception):
    """Base class for package errors."""

    exit_code = 1


class ConfigError(CadpError):
    """Bad or inconsistent configuration (file, preset, or CLI override)."""

    exit_code = 2


class DataError(CadpError):
    """Unreadable or malformed dataset input."""

    exit_code = 3


class DivergenceError(CadpError):
    """Training produced non-finite loss or parameters."""

    exit_code = 4


class MechanismError(CadpError):
    """Privacy mechanism precondition violated (e.g. zero-norm latent)."""

    exit_code = 5


class SchemaError(CadpError):
    """Model/data shape mismatch (feature count, class count, checkpoint)."""

    exit_code = 6


class DiagnosticError(CadpError):
    """Latent diagnostics failed under strict mode."""

    exit_code = 7
