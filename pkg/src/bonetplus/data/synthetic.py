"""Seeded synthetic dataset for desk-scale verification.

Each sample renders bright disks on a dark background; disk count and
radius grow monotonically with a latent age, so total bright area carries
a learnable age signal and the disk centers double as keypoints. Output
uses the exact on-disk layout `load_dataset` reads.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from PIL import Image

from bonetplus.data.types import NUM_KEYPOINTS
from bonetplus.errors import DataError

BACKGROUND_LEVEL = 20  # uint8 background so disks stand out but the field is not pure black


def default_disk_count(age_months: float, gender: int) -> int:
    return 1 + int(age_months // 12) + int(gender)


def default_disk_radius(age_months: float) -> int:
    return 10 + int(age_months // 24)


@dataclass
class SyntheticSpec:
    """Parameters of the synthetic renderer; same seed means same bytes."""

    seed: int
    n_samples: int
    image_size: int = 500
    age_range: tuple[float, float] = (0.0, 228.0)
    disk_count_fn: Callable[[float, int], int] = field(default=default_disk_count)
    disk_radius_fn: Callable[[float], int] = field(default=default_disk_radius)


def _place_disks(
    rng: np.random.Generator, n: int, radius: int, size: int
) -> list[tuple[int, int]]:
    """Rejection-sample non-overlapping disk centers, border-safe."""
    centers: list[tuple[int, int]] = []
    margin = radius + 2
    min_dist_sq = (2 * radius + 2) ** 2
    for _ in range(n):
        for _attempt in range(1000):
            cx = int(rng.integers(margin, size - margin))
            cy = int(rng.integers(margin, size - margin))
            if all((cx - x) ** 2 + (cy - y) ** 2 >= min_dist_sq for x, y in centers):
                centers.append((cx, cy))
                break
        else:
            raise DataError(
                f"could not place {n} non-overlapping disks of radius {radius} on {size}x{size}"
            )
    return centers


def _render(centers: list[tuple[int, int]], radius: int, size: int) -> np.ndarray:
    img = np.full((size, size), BACKGROUND_LEVEL, dtype=np.uint8)
    ys, xs = np.ogrid[:size, :size]
    for cx, cy in centers:
        img[(xs - cx) ** 2 + (ys - cy) ** 2 <= radius * radius] = 255
    return img


def generate_synthetic(spec: SyntheticSpec, root: Path | str, split: str = "train") -> list[str]:
    """Write one split under ``root`` and return the generated sample ids."""
    if spec.n_samples <= 0:
        raise DataError(f"n_samples must be positive, got {spec.n_samples}")
    root = Path(root)
    img_dir = root / split
    img_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)

    ids: list[str] = []
    rows: list[tuple[str, float, int]] = []
    annotations: dict[str, dict] = {}
    lo, hi = spec.age_range
    for i in range(spec.n_samples):
        age = float(rng.uniform(lo, hi))
        gender = int(rng.integers(0, 2))
        count = int(spec.disk_count_fn(age, gender))
        radius = int(spec.disk_radius_fn(age))
        centers = _place_disks(rng, count, radius, spec.image_size)
        img = _render(centers, radius, spec.image_size)

        sample_id = f"{split}_{i:04d}"
        Image.fromarray(img, mode="L").save(img_dir / f"{sample_id}.png")

        xs = [c[0] for c in centers]
        ys = [c[1] for c in centers]
        pad = radius + 4
        x0 = max(0, min(xs) - pad)
        y0 = max(0, min(ys) - pad)
        x1 = min(spec.image_size, max(xs) + pad)
        y1 = min(spec.image_size, max(ys) + pad)
        annotations[sample_id] = {
            "bbox": [x0, y0, x1 - x0, y1 - y0],
            "keypoints": [[x, y] for x, y in centers[:NUM_KEYPOINTS]],
        }
        rows.append((sample_id, age, gender))
        ids.append(sample_id)

    with open(root / f"{split}.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "boneage_months", "male"])
        for sample_id, age, gender in rows:
            writer.writerow([sample_id, repr(age), gender])
    with open(root / f"{split}_annotations.json", "w") as fh:
        json.dump(annotations, fh, indent=1)
    return ids


def label_histogram(ages, bucket_months: float = 12.0) -> dict[str, int]:
    """Counts per age bucket, keyed like '0-11' (months); buckets sum to n."""
    counts: dict[str, int] = {}
    for age in ages:
        b = int(age // bucket_months)
        lo = int(b * bucket_months)
        hi = int((b + 1) * bucket_months) - 1
        key = f"{lo}-{hi}"
        counts[key] = counts.get(key, 0) + 1
    return dict(sorted(counts.items(), key=lambda kv: int(kv[0].split("-")[0])))
