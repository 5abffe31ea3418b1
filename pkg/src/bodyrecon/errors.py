"""Exception types shared across the package."""


class BodyReconError(Exception):
    """Base class for all package errors."""


class MeshError(BodyReconError):
    """Invalid mesh topology or geometry."""


class ConfigError(BodyReconError):
    """Rejected configuration value; message names the offending field."""


class TrainingDiverged(BodyReconError):
    """Loss became non-finite during optimization."""


class CheckpointError(BodyReconError):
    """Unreadable or version-incompatible model checkpoint."""


class NoIsosurface(BodyReconError):
    """The scalar grid does not cross the extraction threshold."""


class FieldEvaluationError(BodyReconError):
    """An implicit field returned non-finite values."""


class CameraFrameError(BodyReconError):
    """The body does not project inside the image frame."""


class BodySpecError(BodyReconError):
    """Body specification outside joint limits or self-intersecting."""
