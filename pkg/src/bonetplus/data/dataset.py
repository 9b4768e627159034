"""Dataset layout reader and network-input preparation.

Expected layout under a root directory::

    root/<split>.csv                   id,boneage_months,male
    root/<split>_annotations.json      {"<id>": {"bbox": [x0,y0,w,h],
                                                 "keypoints": [[x,y], ...]}}
    root/<split>/<id>.png              8-bit grayscale

Samples missing an annotation entry degrade to a full-image bbox with all
keypoints absent (logged once per sample).
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np
from PIL import Image

from bonetplus.data.transforms import (
    AugmentConfig,
    apply_augment,
    crop_and_resize,
    draw_augment,
    make_attention_map,
    rng_for_sample,
)
from bonetplus.data.types import HandRadiograph, PreparedSample, pad_keypoints
from bonetplus.errors import DataError

logger = logging.getLogger(__name__)


@dataclass
class DataConfig:
    """Preprocessing knobs left open by the source recipe."""

    sigma: float = 15.0  # Gaussian radius (px) of keypoint bumps at 500x500
    combine: str = "max"  # "max" (default) or "sum" (clipped to 1)
    out_size: int = 500
    augment: AugmentConfig = field(default_factory=AugmentConfig)


def _load_image(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("L"), dtype=np.float32)
    except FileNotFoundError:
        raise DataError(f"image file missing: {path}") from None
    except OSError as exc:
        raise DataError(f"unreadable image {path}: {exc}") from None
    return arr / 255.0


def load_dataset(root_dir: Path | str, split: str) -> Iterator[HandRadiograph]:
    """Yield samples of one split in CSV row order."""
    root = Path(root_dir)
    csv_path = root / f"{split}.csv"
    if not csv_path.is_file():
        raise DataError(f"split CSV missing: {csv_path}")

    ann_path = root / f"{split}_annotations.json"
    annotations: dict[str, dict] = {}
    if ann_path.is_file():
        with open(ann_path) as fh:
            annotations = json.load(fh)
    else:
        logger.warning("annotations file missing: %s (all samples fall back to full-image bbox)", ann_path)

    with open(csv_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:3]] != ["id", "boneage_months", "male"]:
            raise DataError(f"{csv_path}: expected header id,boneage_months,male, got {header}")
        for row_num, row in enumerate(reader, start=1):
            if len(row) < 3:
                raise DataError(f"{csv_path}: row {row_num} has {len(row)} fields, expected 3")
            sample_id = row[0].strip()
            try:
                bone_age = float(row[1])
            except ValueError:
                raise DataError(
                    f"{csv_path}: row {row_num}: boneage_months {row[1]!r} is not a number"
                ) from None
            if row[2].strip() not in ("0", "1"):
                raise DataError(f"{csv_path}: row {row_num}: male must be 0 or 1, got {row[2]!r}")
            gender = int(row[2])

            image = _load_image(root / split / f"{sample_id}.png")
            ann = annotations.get(sample_id)
            if ann is None:
                logger.warning("sample %s: no annotation entry, using full-image bbox", sample_id)
                h, w = image.shape
                bbox = (0.0, 0.0, float(w), float(h))
                keypoints = pad_keypoints(None)
            else:
                bbox = tuple(float(v) for v in ann["bbox"])
                keypoints = pad_keypoints(ann.get("keypoints"))
            yield HandRadiograph(
                image=image,
                bbox=bbox,
                keypoints=keypoints,
                gender=gender,
                bone_age=bone_age,
                sample_id=sample_id,
            )


def prepare_sample(sample: HandRadiograph, cfg: DataConfig | None = None) -> PreparedSample:
    """Crop, resize and synthesize the attention map for one sample."""
    cfg = cfg or DataConfig()
    image, kps = crop_and_resize(sample, cfg.out_size)
    amap = make_attention_map(kps, cfg.sigma, cfg.out_size, cfg.combine)
    return PreparedSample(
        cropped_image=image[None],
        attention_map=amap,
        gender=sample.gender,
        bone_age=sample.bone_age,
        sample_id=sample.sample_id,
    )


class PreparedDataset:
    """Materialized, network-ready split held as stacked arrays."""

    def __init__(self, samples: list[PreparedSample]):
        if not samples:
            raise DataError("dataset is empty")
        self.images = np.stack([s.cropped_image for s in samples]).astype(np.float32)
        self.maps = np.stack([s.attention_map for s in samples]).astype(np.float32)
        self.genders = np.array([s.gender for s in samples], dtype=np.int64)
        self.ages = np.array([s.bone_age for s in samples], dtype=np.float32)
        self.ids = [s.sample_id for s in samples]

    def __len__(self) -> int:
        return len(self.ids)

    @classmethod
    def from_root(
        cls, root_dir: Path | str, split: str, cfg: DataConfig | None = None
    ) -> "PreparedDataset":
        cfg = cfg or DataConfig()
        return cls([prepare_sample(s, cfg) for s in load_dataset(root_dir, split)])

    def batch(self, indices: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        return (
            self.images[indices],
            self.maps[indices],
            self.genders[indices],
            self.ages[indices],
        )

    def augmented_batch(
        self, indices: np.ndarray, cfg: AugmentConfig, seed: int, epoch: int
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Training batch with per-sample draws keyed by (seed, epoch, index)."""
        imgs = np.empty_like(self.images[indices])
        maps = np.empty_like(self.maps[indices])
        for out_i, idx in enumerate(indices):
            draw = draw_augment(rng_for_sample(seed, epoch, int(idx)), cfg)
            imgs[out_i], maps[out_i] = apply_augment(self.images[idx], self.maps[idx], draw)
        return imgs, maps, self.genders[indices], self.ages[indices]
