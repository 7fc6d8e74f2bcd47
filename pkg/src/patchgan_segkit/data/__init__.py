from .augment import AUGMENT_KINDS, apply_augment
from .records import DatasetManifest, SampleRecord
from .recipes import (
    RawPair,
    iter_raw_pairs,
    preprocess_coco,
    preprocess_fc,
    preprocess_ff,
    subset_manifest,
    synthetic_raw_pairs,
)
from .synthetic import SynthConfig, generate_synthetic, synthetic_samples
from .tensorio import load_image, load_mask, read_tensor, write_tensor

__all__ = [
    "AUGMENT_KINDS",
    "DatasetManifest",
    "RawPair",
    "SampleRecord",
    "SynthConfig",
    "apply_augment",
    "generate_synthetic",
    "iter_raw_pairs",
    "load_image",
    "load_mask",
    "preprocess_coco",
    "preprocess_fc",
    "preprocess_ff",
    "read_tensor",
    "subset_manifest",
    "synthetic_raw_pairs",
    "synthetic_samples",
    "write_tensor",
]
