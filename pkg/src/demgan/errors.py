"""Exception hierarchy shared across the pipeline.

The CLI maps these onto exit codes, so every failure a user can trigger
should surface as one of them.
"""


class DemGanError(Exception):
    """Base class for all pipeline errors."""


class ConfigError(DemGanError, ValueError):
    """Invalid configuration or argument."""


class DataError(DemGanError):
    """Problem with input data (missing files, empty sets, bad rasters)."""


class DegenerateInputError(DataError, ValueError):
    """Input carries no usable pixels or values."""


class DomainError(DataError, ValueError):
    """Tile is in the wrong value domain for the requested operation."""


class AlignmentError(DataError, ValueError):
    """Tiles or masks do not share a pixel grid."""


class EmptyDatasetError(DataError):
    """No usable entries remain for the requested split."""


class PreconditionError(DataError):
    """A required upstream artifact or value is missing."""


class TrainingDivergedError(DemGanError):
    """A loss became non-finite during training."""
