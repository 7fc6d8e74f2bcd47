"""Preprocessing recipes turning raw image-mask pairs into training datasets.

Three recipes are provided, named after the kind of source material they
were designed for:

* ``ff``   -- 350x350 4-band tiles: four corner-anchored overlapping 256x256
  crops, each emitted in 5 variants (identity, three rotations, hflip);
  20 records per input pair.
* ``fc``   -- 1200x1200 3-channel frames: resized to 512x512, five 256x256
  crops (four corners plus center), each in 4 variants (identity plus three
  rotations); 20 records per input pair.
* ``coco`` -- variable-size RGB images with per-pixel class annotations:
  keep images containing a named class, binarize that class against
  background, resize to 256x256.

Images are resized bilinearly, masks with nearest neighbor so they stay
binary. Splits are inherited from the raw pairs; derived records carry the
parent id as source_id so no parent straddles the train/test boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Mapping

import numpy as np
import torch

from ..errors import ConfigurationError, DataError
from . import synthetic, tensorio
from .augment import apply_augment
from .records import DatasetManifest, SampleRecord

CROP_SIDE = 256

FF_INPUT_SIDE = 350
FF_AUGMENTS = ("identity", "rot90", "rot180", "rot270", "hflip")

FC_INPUT_SIDE = 1200
FC_RESIZE_SIDE = 512
FC_AUGMENTS = ("identity", "rot90", "rot180", "rot270")

COCO_SIDE = 256


@dataclass
class RawPair:
    """An unprocessed image-mask pair. ``mask`` holds {0, 1} values, except
    for class-annotated sources where it holds small integer class ids."""

    id: str
    image: np.ndarray  # (C, H, W) float32 in [0, 1]
    mask: np.ndarray  # (H, W) uint8
    split: str


@dataclass
class ProcessedSample:
    id: str
    source_id: str
    split: str
    image: np.ndarray
    mask: np.ndarray


def resize_image(image: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinear resize of a (C, H, W) float image."""
    t = torch.from_numpy(np.ascontiguousarray(image, dtype=np.float32))[None]
    out = torch.nn.functional.interpolate(
        t, size=(height, width), mode="bilinear", align_corners=False
    )
    return out[0].numpy()


def resize_mask(mask: np.ndarray, height: int, width: int) -> np.ndarray:
    """Nearest-neighbor resize of an (H, W) mask; binary stays binary."""
    t = torch.from_numpy(np.ascontiguousarray(mask, dtype=np.float32))[None, None]
    out = torch.nn.functional.interpolate(t, size=(height, width), mode="nearest")
    return out[0, 0].numpy().astype(mask.dtype)


def corner_crop_offsets(side: int, crop: int) -> list[tuple[int, int]]:
    """The four corner-anchored crop origins for a square input."""
    m = side - crop
    if m < 0:
        raise DataError(f"cannot take {crop}px crops from a {side}px input")
    return [(0, 0), (0, m), (m, 0), (m, m)]


def _crop(image: np.ndarray, mask: np.ndarray, y: int, x: int, side: int):
    return image[:, y : y + side, x : x + side], mask[y : y + side, x : x + side]


def _require_shape(pair: RawPair, channels: int, side: int) -> None:
    if pair.image.shape != (channels, side, side):
        raise DataError(
            f"pair {pair.id}: expected a ({channels}, {side}, {side}) image, "
            f"got {pair.image.shape}"
        )
    if pair.mask.shape != (side, side):
        raise DataError(
            f"pair {pair.id}: expected a ({side}, {side}) mask, got {pair.mask.shape}"
        )


def iter_ff_samples(pairs: Iterable[RawPair]) -> Iterator[ProcessedSample]:
    """Four overlapping corner crops x five variants = 20 samples per pair."""
    for pair in pairs:
        _require_shape(pair, 4, FF_INPUT_SIDE)
        offsets = corner_crop_offsets(FF_INPUT_SIDE, CROP_SIDE)
        for ci, (y, x) in enumerate(offsets):
            img, msk = _crop(pair.image, pair.mask, y, x, CROP_SIDE)
            for kind in FF_AUGMENTS:
                a_img, a_msk = apply_augment(kind, img, msk)
                yield ProcessedSample(
                    id=f"{pair.id}_c{ci}_{kind}",
                    source_id=pair.id,
                    split=pair.split,
                    image=a_img,
                    mask=a_msk,
                )


def iter_fc_samples(pairs: Iterable[RawPair]) -> Iterator[ProcessedSample]:
    """Resize to 512, five crops (corners + center) x four rotations = 20."""
    for pair in pairs:
        _require_shape(pair, 3, FC_INPUT_SIDE)
        image = resize_image(pair.image, FC_RESIZE_SIDE, FC_RESIZE_SIDE)
        mask = resize_mask(pair.mask, FC_RESIZE_SIDE, FC_RESIZE_SIDE)
        center = (FC_RESIZE_SIDE - CROP_SIDE) // 2
        offsets = corner_crop_offsets(FC_RESIZE_SIDE, CROP_SIDE) + [(center, center)]
        for ci, (y, x) in enumerate(offsets):
            img, msk = _crop(image, mask, y, x, CROP_SIDE)
            for kind in FC_AUGMENTS:
                a_img, a_msk = apply_augment(kind, img, msk)
                yield ProcessedSample(
                    id=f"{pair.id}_c{ci}_{kind}",
                    source_id=pair.id,
                    split=pair.split,
                    image=a_img,
                    mask=a_msk,
                )


def iter_coco_samples(
    pairs: Iterable[RawPair], class_id: int, side: int = COCO_SIDE
) -> Iterator[ProcessedSample]:
    """Keep pairs containing the class, binarize it, resize to a square."""
    for pair in pairs:
        binary = (pair.mask == class_id).astype(np.uint8)
        if not binary.any():
            continue
        image = resize_image(pair.image, side, side)
        mask = resize_mask(binary, side, side)
        yield ProcessedSample(
            id=pair.id,
            source_id=pair.id,
            split=pair.split,
            image=image,
            mask=mask,
        )


def materialize(
    samples: Iterable[ProcessedSample],
    out_dir: str | Path,
    name: str,
    channel_semantics: list[str],
) -> DatasetManifest:
    """Write processed samples as PGT1 tensors plus a manifest."""
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "masks").mkdir(parents=True, exist_ok=True)
    records = []
    for s in samples:
        image_rel = f"images/{s.id}.pgt"
        mask_rel = f"masks/{s.id}.pgt"
        tensorio.write_tensor(out_dir / image_rel, s.image.astype(np.float32))
        tensorio.write_tensor(out_dir / mask_rel, s.mask.astype(np.uint8))
        c, h, w = s.image.shape
        records.append(
            SampleRecord(
                id=s.id,
                image_path=image_rel,
                mask_path=mask_rel,
                height=h,
                width=w,
                channels=c,
                split=s.split,
                source_id=s.source_id,
            )
        )
    manifest = DatasetManifest(
        name=name, records=records, channel_semantics=channel_semantics
    )
    manifest.save(out_dir)
    return manifest


def preprocess_ff(
    pairs: Iterable[RawPair],
    out_dir: str | Path,
    seed: int = 0,
    name: str = "ff",
    channel_semantics: list[str] | None = None,
) -> DatasetManifest:
    """Run the ff recipe and materialize the result (20 records per pair).

    The crop grid and augmentation set are fixed, so ``seed`` currently has
    no effect; it is accepted for interface stability.
    """
    del seed
    semantics = channel_semantics or synthetic.CHANNEL_SEMANTICS[4]
    return materialize(iter_ff_samples(pairs), out_dir, name, list(semantics))


def preprocess_fc(
    pairs: Iterable[RawPair],
    out_dir: str | Path,
    seed: int = 0,
    name: str = "fc",
    channel_semantics: list[str] | None = None,
) -> DatasetManifest:
    """Run the fc recipe and materialize the result (20 records per pair)."""
    del seed
    semantics = channel_semantics or synthetic.CHANNEL_SEMANTICS[3]
    return materialize(iter_fc_samples(pairs), out_dir, name, list(semantics))


def preprocess_coco(
    pairs: Iterable[RawPair],
    class_name: str,
    classes: Mapping[str, int],
    out_dir: str | Path,
    name: str = "coco",
    channel_semantics: list[str] | None = None,
) -> DatasetManifest:
    """Run the class-filter recipe for ``class_name`` and materialize it."""
    if class_name not in classes:
        raise DataError(
            f"unknown class name {class_name!r}; known classes: "
            f"{sorted(classes)}"
        )
    semantics = channel_semantics or synthetic.CHANNEL_SEMANTICS[3]
    samples = iter_coco_samples(pairs, class_id=int(classes[class_name]))
    return materialize(samples, out_dir, name, list(semantics))


def subset_manifest(
    manifest: DatasetManifest, fraction: float, seed: int
) -> DatasetManifest:
    """Seeded uniform sample (without replacement) of the train split.

    Keeps floor(fraction * n_train) train records in their original order;
    the test split is untouched. fraction = 1 returns the identical record
    list. Draws for different fractions are independent, not nested.
    """
    if not 0.0 < fraction <= 1.0:
        raise ConfigurationError(f"fraction must lie in (0, 1], got {fraction}")
    if fraction == 1.0:
        records = list(manifest.records)
    else:
        train_idx = [i for i, r in enumerate(manifest.records) if r.split == "train"]
        k = math.floor(fraction * len(train_idx))
        rng = np.random.default_rng(seed)
        chosen = set(rng.choice(len(train_idx), size=k, replace=False).tolist())
        keep = {train_idx[j] for j in chosen}
        records = [
            r
            for i, r in enumerate(manifest.records)
            if r.split != "train" or i in keep
        ]
    return DatasetManifest(
        name=f"{manifest.name}@{fraction:g}",
        records=records,
        channel_semantics=list(manifest.channel_semantics),
        root=manifest.root,
    )


def iter_raw_pairs(manifest: DatasetManifest) -> Iterator[RawPair]:
    """Stream a manifest's records back as raw pairs (recipe input)."""
    for record in manifest.records:
        image = manifest.load_image(record)
        mask = tensorio.read_tensor(manifest.resolve(record.mask_path))
        if mask.ndim != 2:
            raise DataError(f"record {record.id}: mask is not single-channel")
        yield RawPair(id=record.id, image=image, mask=mask, split=record.split)


def synthetic_raw_pairs(
    n_train: int,
    n_test: int,
    side: int,
    channels: int,
    seed: int = 0,
    blob_radius_range: tuple[int, int] | None = None,
) -> Iterator[RawPair]:
    """Procedural raw pairs at an arbitrary side length, for recipe input."""
    radius = blob_radius_range or (max(2, side // 16), max(3, side // 6))
    config = synthetic.SynthConfig(
        n_samples=n_train,
        channels=channels,
        side=side,
        blob_radius_range=radius,
        seed=seed,
        n_test=max(1, n_test),
    )
    for sample_id, split, image, mask in synthetic.synthetic_samples(config):
        if split == "test" and n_test == 0:
            continue
        yield RawPair(id=sample_id, image=image, mask=mask, split=split)
