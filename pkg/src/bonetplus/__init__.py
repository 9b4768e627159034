"""Two-stream bone age assessment from hand radiographs.

A global channel (conv stem + transformer) reads the cropped radiograph,
a local channel (conv stem + receptive-field attention convolution) reads
a keypoint attention map, and an inception-style trunk fuses both into a
gender-aware age regression in months.
"""

from bonetplus.errors import (
    BonetError,
    CheckpointError,
    ConfigError,
    DataError,
    TrainingError,
)
from bonetplus.model import BoNetPlus, BoNetPlusConfig, PredictionRecord, count_parameters

__version__ = "0.1.0"

__all__ = [
    "BoNetPlus",
    "BoNetPlusConfig",
    "BonetError",
    "CheckpointError",
    "ConfigError",
    "DataError",
    "PredictionRecord",
    "TrainingError",
    "count_parameters",
    "__version__",
]
