"""Exception hierarchy shared across the package."""


class EvidnetError(Exception):
    """Base class for all evidnet errors."""


class DimensionError(EvidnetError):
    """Tensor/image shapes are incompatible with the requested operation."""


class ArgumentError(EvidnetError):
    """An argument value is outside its documented domain."""


class DataError(EvidnetError):
    """A dataset on disk is missing, inconsistent, or unreadable."""


class EmptyDatasetError(DataError):
    """A dataset directory contains no samples."""


class CheckpointError(EvidnetError):
    """A checkpoint file is corrupt; the message names the offending field."""


class UnsupportedVersionError(CheckpointError):
    """A checkpoint declares a format version this build cannot read."""


class TrainingDivergedError(EvidnetError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch, batch, message=None):
        self.epoch = epoch
        self.batch = batch
        super().__init__(
            message
            or f"non-finite loss at epoch {epoch}, batch {batch}"
        )


class CalibrationDegenerateError(EvidnetError):
    """The uncertainty scores carry no signal to calibrate a threshold."""
