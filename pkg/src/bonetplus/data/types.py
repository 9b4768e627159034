"""Sample containers for the data pipeline.

Keypoints are stored as a fixed (17, 2) float array; rows of NaN mark
absent keypoints (sources with fewer annotations are padded, transformed
points that leave the crop are blanked).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from bonetplus.errors import DataError

NUM_KEYPOINTS = 17
INPUT_SIZE = 500
AGE_RANGE_MONTHS = (0.0, 240.0)


def pad_keypoints(points) -> np.ndarray:
    """Return a (17, 2) float64 array, padding missing rows with NaN."""
    out = np.full((NUM_KEYPOINTS, 2), np.nan, dtype=np.float64)
    if points is None:
        return out
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    n = min(len(pts), NUM_KEYPOINTS)
    out[:n] = pts[:n]
    return out


@dataclass
class HandRadiograph:
    """One annotated source sample in original pixel coordinates."""

    image: np.ndarray  # (H, W) float, values in [0, 1]
    bbox: tuple[float, float, float, float]  # (x0, y0, w, h)
    keypoints: np.ndarray  # (17, 2), NaN rows = absent
    gender: int  # 0 female, 1 male
    bone_age: float  # months
    sample_id: str

    def __post_init__(self) -> None:
        self.image = np.asarray(self.image, dtype=np.float32)
        if self.image.ndim != 2:
            raise DataError(f"sample {self.sample_id}: image must be 2-D, got shape {self.image.shape}")
        self.keypoints = pad_keypoints(self.keypoints)
        if self.gender not in (0, 1):
            raise DataError(f"sample {self.sample_id}: gender must be 0 or 1, got {self.gender!r}")
        lo, hi = AGE_RANGE_MONTHS
        if not (lo <= self.bone_age <= hi):
            raise DataError(
                f"sample {self.sample_id}: bone_age {self.bone_age} outside [{lo}, {hi}] months"
            )
        self.bbox = self._clamped_bbox()

    def _clamped_bbox(self) -> tuple[float, float, float, float]:
        h, w = self.image.shape
        x0, y0, bw, bh = (float(v) for v in self.bbox)
        x1, y1 = x0 + bw, y0 + bh
        x0, x1 = max(0.0, x0), min(float(w), x1)
        y0, y1 = max(0.0, y0), min(float(h), y1)
        if x1 - x0 <= 0 or y1 - y0 <= 0:
            raise DataError(
                f"sample {self.sample_id}: bbox {self.bbox} has no area inside the image"
            )
        return (x0, y0, x1 - x0, y1 - y0)


@dataclass
class PreparedSample:
    """Network-ready pair of 1xSxS grids plus label and gender."""

    cropped_image: np.ndarray  # (1, S, S) float32 in [0, 1]
    attention_map: np.ndarray  # (1, S, S) float32 in [0, 1]
    gender: int
    bone_age: float
    sample_id: str = ""
