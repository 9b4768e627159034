from bonetplus.data.dataset import DataConfig, PreparedDataset, load_dataset, prepare_sample
from bonetplus.data.synthetic import SyntheticSpec, generate_synthetic, label_histogram
from bonetplus.data.transforms import (
    AugmentConfig,
    AugmentDraw,
    apply_augment,
    crop_and_resize,
    draw_augment,
    make_attention_map,
    rng_for_sample,
)
from bonetplus.data.types import NUM_KEYPOINTS, HandRadiograph, PreparedSample

__all__ = [
    "AugmentConfig",
    "AugmentDraw",
    "DataConfig",
    "HandRadiograph",
    "NUM_KEYPOINTS",
    "PreparedDataset",
    "PreparedSample",
    "SyntheticSpec",
    "apply_augment",
    "crop_and_resize",
    "draw_augment",
    "generate_synthetic",
    "label_histogram",
    "load_dataset",
    "make_attention_map",
    "prepare_sample",
    "rng_for_sample",
]
