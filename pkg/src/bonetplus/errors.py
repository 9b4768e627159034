"""Exception hierarchy shared across the package."""


class BonetError(Exception):
    """Base class for all package-specific failures."""


class ConfigError(BonetError):
    """Invalid or inconsistent configuration (unknown key, bad value)."""


class DataError(BonetError):
    """Dataset layout or sample content violates the documented contract."""


class TrainingError(BonetError):
    """Training cannot proceed (empty dataset, non-finite loss, ...)."""


class CheckpointError(BonetError):
    """Checkpoint missing, corrupted, or incompatible with the model."""
