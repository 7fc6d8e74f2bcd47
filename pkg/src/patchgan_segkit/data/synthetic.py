"""Procedural blob datasets for desk-scale experiments.

Each sample is a background gradient plus Gaussian noise, with a foreground
made of randomly placed ellipses that get a per-channel intensity offset;
the mask is the exact ellipse union. Four-channel mode appends a pseudo
near-infrared channel correlated with the red channel, so experiments that
move weights between 3- and 4-channel inputs have a meaningful extra band.

Everything is a pure function of the config (including its seed).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from ..errors import ConfigurationError
from . import tensorio
from .records import DatasetManifest, SampleRecord

CHANNEL_SEMANTICS = {3: ["blue", "green", "red"], 4: ["blue", "green", "red", "nir"]}

# Foreground fraction is kept in (0, 0.5] by redrawing blob placements.
_MAX_FRACTION = 0.5
_MAX_ATTEMPTS = 200


@dataclass
class SynthConfig:
    n_samples: int = 64
    channels: int = 4
    side: int = 256
    blob_count_range: tuple[int, int] = (2, 6)
    blob_radius_range: tuple[int, int] = (8, 40)
    noise_sigma: float = 0.05
    seed: int = 0
    n_test: int | None = None  # None -> max(2, n_samples // 8)

    def validate(self) -> None:
        if self.n_samples < 1:
            raise ConfigurationError(f"n_samples must be >= 1, got {self.n_samples}")
        if self.channels not in (3, 4):
            raise ConfigurationError(f"channels must be 3 or 4, got {self.channels}")
        if self.side < 8:
            raise ConfigurationError(f"side must be >= 8, got {self.side}")
        lo, hi = self.blob_count_range
        if not 1 <= lo <= hi:
            raise ConfigurationError(
                f"blob_count_range must satisfy 1 <= lo <= hi, got {lo}..{hi}"
            )
        rlo, rhi = self.blob_radius_range
        if not 1 <= rlo <= rhi:
            raise ConfigurationError(
                f"blob_radius_range must satisfy 1 <= lo <= hi, got {rlo}..{rhi}"
            )
        if self.noise_sigma < 0:
            raise ConfigurationError(
                f"noise_sigma must be >= 0, got {self.noise_sigma}"
            )
        if self.n_test is not None and self.n_test < 1:
            raise ConfigurationError(f"n_test must be >= 1, got {self.n_test}")

    @property
    def resolved_n_test(self) -> int:
        return self.n_test if self.n_test is not None else max(2, self.n_samples // 8)


def _blob_union(
    rng: np.random.Generator,
    side: int,
    count_range: tuple[int, int],
    radius_range: tuple[int, int],
) -> np.ndarray:
    yy, xx = np.mgrid[0:side, 0:side].astype(np.float64)
    for _ in range(_MAX_ATTEMPTS):
        mask = np.zeros((side, side), dtype=bool)
        n_blobs = int(rng.integers(count_range[0], count_range[1] + 1))
        for _ in range(n_blobs):
            cx = rng.uniform(0.1 * side, 0.9 * side)
            cy = rng.uniform(0.1 * side, 0.9 * side)
            a = rng.uniform(radius_range[0], radius_range[1])
            b = rng.uniform(radius_range[0], radius_range[1])
            theta = rng.uniform(0.0, np.pi)
            dx, dy = xx - cx, yy - cy
            u = dx * np.cos(theta) + dy * np.sin(theta)
            v = -dx * np.sin(theta) + dy * np.cos(theta)
            mask |= (u / a) ** 2 + (v / b) ** 2 <= 1.0
        frac = mask.mean()
        if 0.0 < frac <= _MAX_FRACTION:
            return mask
    # Degenerate config (e.g. huge radii): fall back to a single centered blob.
    r = max(1, min(radius_range[0], side // 4))
    dx, dy = xx - side / 2, yy - side / 2
    return (dx**2 + dy**2) <= r**2


def render_sample(
    rng: np.random.Generator, config: SynthConfig
) -> tuple[np.ndarray, np.ndarray]:
    """Draw one (image, mask) pair; image is (C, S, S) float32 in [0, 1],
    mask is (S, S) uint8."""
    side = config.side
    mask = _blob_union(rng, side, config.blob_count_range, config.blob_radius_range)
    fg = mask.astype(np.float64)

    yy, xx = np.mgrid[0:side, 0:side].astype(np.float64) / max(side - 1, 1)
    gx, gy = rng.uniform(-1.0, 1.0, size=2)
    gradient = 0.1 * (gx * xx + gy * yy)

    chans = []
    for _ in range(3):
        base = rng.uniform(0.15, 0.35)
        offset = rng.uniform(0.25, 0.45)
        noise = rng.normal(0.0, config.noise_sigma, size=(side, side))
        chans.append(base + gradient + offset * fg + noise)
    if config.channels == 4:
        offset = rng.uniform(0.35, 0.55)
        noise = rng.normal(0.0, config.noise_sigma, size=(side, side))
        chans.append(0.5 * chans[2] + 0.1 + offset * fg + noise)

    image = np.clip(np.stack(chans), 0.0, 1.0).astype(np.float32)
    return image, mask.astype(np.uint8)


def synthetic_samples(
    config: SynthConfig,
) -> Iterator[tuple[str, str, np.ndarray, np.ndarray]]:
    """Yield (sample_id, split, image, mask) for train then test samples."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    n_test = config.resolved_n_test
    for i in range(config.n_samples + n_test):
        split = "train" if i < config.n_samples else "test"
        image, mask = render_sample(rng, config)
        yield f"synth-{i:05d}", split, image, mask


def generate_synthetic(config: SynthConfig, out_dir: str | Path) -> DatasetManifest:
    """Materialize a synthetic dataset (PGT1 tensors plus manifest) on disk."""
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "masks").mkdir(parents=True, exist_ok=True)
    records = []
    for sample_id, split, image, mask in synthetic_samples(config):
        image_rel = f"images/{sample_id}.pgt"
        mask_rel = f"masks/{sample_id}.pgt"
        tensorio.write_tensor(out_dir / image_rel, image)
        tensorio.write_tensor(out_dir / mask_rel, mask)
        records.append(
            SampleRecord(
                id=sample_id,
                image_path=image_rel,
                mask_path=mask_rel,
                height=config.side,
                width=config.side,
                channels=config.channels,
                split=split,
                source_id=sample_id,
            )
        )
    manifest = DatasetManifest(
        name=out_dir.name or "synthetic",
        records=records,
        channel_semantics=list(CHANNEL_SEMANTICS[config.channels]),
    )
    manifest.save(out_dir)
    return manifest
