"""Custom exceptions for krlsdl.

All exceptions inherit from KrlsError for easy catching.
Each exception includes context in its message.
"""

from __future__ import annotations


class KrlsError(Exception):
    """Base exception for all krlsdl errors."""

    def __init__(self, message: str, details: dict[str, str] | None = None) -> None:
        self.message = message
        self.details = details or {}
        super().__init__(message)


class ConfigurationError(KrlsError):
    """Configuration loading or validation failed."""


class ValidationError(KrlsError):
    """Input validation failed (shapes, finiteness, preconditions)."""


class ParseError(KrlsError):
    """Failed to parse a dataset file."""


class SnapshotError(KrlsError):
    """A profile snapshot could not be read, written or verified."""


class UnsupportedKernelError(KrlsError):
    """The requested operation is not available for this kernel kind."""


class InvariantError(KrlsError):
    """A profile consistency invariant does not hold."""


class NumericalError(KrlsError):
    """A numerical update could not be carried out safely."""


class UpdateRejectedError(NumericalError):
    """Growing the profile would invert a (numerically) singular matrix."""


class PruneRejectedError(NumericalError):
    """Removing the requested samples would make the profile singular."""


class DegenerateAtomError(NumericalError):
    """A dictionary atom has (near) zero norm and cannot be normalized."""
