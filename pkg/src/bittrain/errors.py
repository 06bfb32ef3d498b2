"""Exception types shared across the package."""


class BittrainError(Exception):
    """Base class for all package-specific errors."""


class InputError(BittrainError):
    """Malformed operand (dimension mismatch, non-permutation, length mismatch)."""


class ConfigError(BittrainError):
    """Invalid or inconsistent configuration."""


class StateError(BittrainError):
    """Operation invoked in a state that forbids it (e.g. mid-mini-batch)."""


class ProgressError(BittrainError):
    """Data pipeline progress violation (batch re-request or skip)."""


class NumericError(BittrainError):
    """Non-finite value where a finite one is required."""


class CorruptionError(BittrainError):
    """Replicated state that must be bitwise-identical has diverged."""


class ConstraintError(BittrainError):
    """Planner constraint violated (capacity, memory, resource bounds)."""


class FormatError(BittrainError):
    """Malformed checkpoint bytes; carries the byte offset of the defect."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class VersionError(BittrainError):
    """Checkpoint version not supported by this build."""
