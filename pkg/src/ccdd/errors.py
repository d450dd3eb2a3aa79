"""Exception hierarchy shared across the package.

Every error the CLI and service surface is one of these, so exit codes and
HTTP statuses can be mapped without string matching.
"""


class CcddError(Exception):
    """Base class for all package errors."""


class ConfigError(CcddError):
    """Invalid or inconsistent run configuration."""


class InputError(CcddError):
    """Malformed runtime input (bad shapes, out-of-range tokens, bad corpus)."""


class DomainError(CcddError):
    """Argument outside the mathematical domain of an operation."""


class NumericError(CcddError):
    """Non-finite values encountered during computation."""


class CheckpointError(CcddError):
    """Base for checkpoint I/O failures."""


class BadMagicError(CheckpointError):
    """File does not start with the checkpoint magic bytes."""


class VersionMismatchError(CheckpointError):
    """Checkpoint format version is not supported."""


class TruncatedPayloadError(CheckpointError):
    """Checkpoint file ends before the declared payload."""
