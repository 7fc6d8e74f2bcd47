"""Grid-preserving augmentations applied identically to image and mask.

Every op is a bijection on the pixel grid, so masks stay binary and applying
rot90 four times (or a flip twice) returns the original arrays bit-exactly.
"""

from __future__ import annotations

import numpy as np

from ..errors import ConfigurationError

AUGMENT_KINDS = ("identity", "rot90", "rot180", "rot270", "hflip", "vflip")


def _apply(kind: str, arr: np.ndarray, hw_axes: tuple[int, int]) -> np.ndarray:
    ax_h, ax_w = hw_axes
    if kind == "identity":
        return arr.copy()
    if kind == "rot90":
        return np.ascontiguousarray(np.rot90(arr, 1, axes=(ax_h, ax_w)))
    if kind == "rot180":
        return np.ascontiguousarray(np.rot90(arr, 2, axes=(ax_h, ax_w)))
    if kind == "rot270":
        return np.ascontiguousarray(np.rot90(arr, 3, axes=(ax_h, ax_w)))
    if kind == "hflip":
        return np.ascontiguousarray(np.flip(arr, axis=ax_w))
    if kind == "vflip":
        return np.ascontiguousarray(np.flip(arr, axis=ax_h))
    raise ConfigurationError(
        f"unknown augmentation {kind!r}; valid kinds: {AUGMENT_KINDS}"
    )


def apply_augment(
    kind: str, image: np.ndarray, mask: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Apply one augmentation to a (C, H, W) image and its (H, W) mask."""
    return _apply(kind, image, (1, 2)), _apply(kind, mask, (0, 1))
