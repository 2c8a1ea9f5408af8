"""Exception types shared across the workbench."""


class SatbenchError(Exception):
    """Base class for all workbench errors."""


class FormatError(SatbenchError, ValueError):
    """A binary file (dataset, checkpoint, image) violates its declared format."""


class ShapeError(SatbenchError, ValueError):
    """Operands have incompatible dimensions."""


class ConfigError(SatbenchError, ValueError):
    """A run configuration is malformed, incomplete, or references missing files."""


class TrainingError(SatbenchError, RuntimeError):
    """Training diverged (non-finite loss or parameters)."""
