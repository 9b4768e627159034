"""Geometric and photometric preprocessing.

Coordinate convention: a keypoint (x, y) addresses column x, row y of the
image array; the crop maps source coordinates through the plain affine
x' = (x - x0) * (S / w), so output pixel j samples the source at
x0 + j * w / S (bilinear).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from bonetplus.data.types import HandRadiograph
from bonetplus.errors import DataError


def crop_and_resize(
    sample: HandRadiograph, out_size: int = 500
) -> tuple[np.ndarray, np.ndarray]:
    """Crop to the sample's bbox and resample to ``out_size`` square.

    Returns ``(image, keypoints)`` where the image is (out_size, out_size)
    float32 and the keypoints went through the same crop+scale affine;
    points landing outside [0, out_size) are marked absent (NaN).
    """
    x0, y0, bw, bh = sample.bbox
    if bw <= 0 or bh <= 0:
        raise DataError(f"sample {sample.sample_id}: degenerate bbox {sample.bbox}")
    sx = out_size / bw
    sy = out_size / bh

    # inverse map: output (row j, col i) samples source (y0 + j/sy, x0 + i/sx)
    rows = y0 + np.arange(out_size, dtype=np.float64) / sy
    cols = x0 + np.arange(out_size, dtype=np.float64) / sx
    grid = np.stack(np.meshgrid(rows, cols, indexing="ij"))
    resized = ndimage.map_coordinates(
        sample.image.astype(np.float64), grid, order=1, mode="nearest"
    ).astype(np.float32)

    kps = sample.keypoints.copy()
    kps[:, 0] = (kps[:, 0] - x0) * sx
    kps[:, 1] = (kps[:, 1] - y0) * sy
    inside = (
        (kps[:, 0] >= 0) & (kps[:, 0] < out_size) & (kps[:, 1] >= 0) & (kps[:, 1] < out_size)
    )
    kps[~inside] = np.nan
    return resized, kps


def make_attention_map(
    keypoints: np.ndarray, sigma: float, size: int = 500, combine: str = "max"
) -> np.ndarray:
    """Render keypoint Gaussians into a (1, size, size) map in [0, 1].

    Per pixel: max over present keypoints of exp(-(dx^2 + dy^2) / (2 sigma^2)).
    ``combine="sum"`` adds the bumps instead and clips at 1. All keypoints
    absent gives the all-zero map.
    """
    if sigma <= 0:
        raise DataError(f"sigma must be positive, got {sigma}")
    if combine not in ("max", "sum"):
        raise DataError(f"unknown combine mode {combine!r}")
    kps = np.asarray(keypoints, dtype=np.float64).reshape(-1, 2)
    out = np.zeros((size, size), dtype=np.float64)
    xs = np.arange(size, dtype=np.float64)
    ys = np.arange(size, dtype=np.float64)[:, None]
    for x, y in kps:
        if not (np.isfinite(x) and np.isfinite(y)):
            continue
        g = np.exp(-((xs - x) ** 2 + (ys - y) ** 2) / (2.0 * sigma * sigma))
        if combine == "max":
            np.maximum(out, g, out=out)
        else:
            out += g
    if combine == "sum":
        np.clip(out, 0.0, 1.0, out=out)
    return out[None].astype(np.float32)


@dataclass
class AugmentConfig:
    """Photometric/geometric jitter ranges applied at training time only."""

    enabled: bool = True
    brightness: tuple[float, float] = (0.8, 1.2)
    contrast: tuple[float, float] = (0.8, 1.2)
    rotation_deg: float = 15.0
    translate_frac: float = 0.05
    scale: tuple[float, float] = (0.9, 1.1)
    flip_prob: float = 0.5


@dataclass(frozen=True)
class AugmentDraw:
    """One realized set of jitter parameters."""

    brightness: float = 1.0
    contrast: float = 1.0
    angle_deg: float = 0.0
    translate: tuple[float, float] = (0.0, 0.0)  # fractions of width/height
    scale: float = 1.0
    flip: bool = False

    @property
    def is_identity(self) -> bool:
        return (
            self.brightness == 1.0
            and self.contrast == 1.0
            and self.angle_deg == 0.0
            and self.translate == (0.0, 0.0)
            and self.scale == 1.0
            and not self.flip
        )


def rng_for_sample(seed: int, epoch: int, index: int) -> np.random.Generator:
    """Draws depend only on (seed, epoch, index), never on worker layout."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(epoch, index)))


def draw_augment(rng: np.random.Generator, cfg: AugmentConfig) -> AugmentDraw:
    return AugmentDraw(
        brightness=float(rng.uniform(*cfg.brightness)),
        contrast=float(rng.uniform(*cfg.contrast)),
        angle_deg=float(rng.uniform(-cfg.rotation_deg, cfg.rotation_deg)),
        translate=(
            float(rng.uniform(-cfg.translate_frac, cfg.translate_frac)),
            float(rng.uniform(-cfg.translate_frac, cfg.translate_frac)),
        ),
        scale=float(rng.uniform(*cfg.scale)),
        flip=bool(rng.random() < cfg.flip_prob),
    )


def _affine_grid(draw: AugmentDraw, shape: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    """Inverse-map matrix/offset for scipy.ndimage.affine_transform.

    Forward transform: rotate by angle about the center, scale about the
    center, then translate by (tx*W, ty*H). affine_transform wants the map
    from output coordinates back to input coordinates, in (row, col) order.
    """
    h, w = shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    theta = math.radians(draw.angle_deg)
    s = draw.scale
    # forward (row, col): p' = s * R @ (p - c) + c + t
    fwd = s * np.array([[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]])
    t = np.array([draw.translate[1] * h, draw.translate[0] * w])
    inv = np.linalg.inv(fwd)
    center = np.array([cy, cx])
    offset = center - inv @ (center + t)
    return inv, offset


def apply_augment(
    image: np.ndarray, attention_map: np.ndarray | None, draw: AugmentDraw
) -> tuple[np.ndarray, np.ndarray | None]:
    """Apply one draw; photometric terms hit the image only, geometry both.

    Inputs and outputs are (1, H, W) arrays clipped to [0, 1].
    """
    img = image[0].astype(np.float32)
    img = img * draw.brightness
    mean = float(img.mean())
    img = mean + draw.contrast * (img - mean)

    amap = None if attention_map is None else attention_map[0].astype(np.float32)
    if draw.angle_deg != 0.0 or draw.scale != 1.0 or draw.translate != (0.0, 0.0):
        inv, offset = _affine_grid(draw, img.shape)
        img = ndimage.affine_transform(img, inv, offset=offset, order=1, mode="constant", cval=0.0)
        if amap is not None:
            amap = ndimage.affine_transform(
                amap, inv, offset=offset, order=1, mode="constant", cval=0.0
            )
    if draw.flip:
        img = img[:, ::-1]
        if amap is not None:
            amap = amap[:, ::-1]

    img = np.clip(img, 0.0, 1.0)[None].astype(np.float32)
    if amap is None:
        return np.ascontiguousarray(img), None
    amap = np.clip(amap, 0.0, 1.0)[None].astype(np.float32)
    return np.ascontiguousarray(img), np.ascontiguousarray(amap)
