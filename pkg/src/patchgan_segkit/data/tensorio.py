"""On-disk tensor formats.

The native format is "PGT1": magic bytes ``PGT1``, a u8 dtype code
(0 = uint8, 1 = float32), a u8 ndim, ndim little-endian u32 dims, then the
raw row-major data. Images are stored as float32 (C, H, W) scaled to [0, 1];
masks as uint8 (H, W) with values {0, 1}.

Three-channel images and masks may alternatively be 8-bit PNGs; PNG masks
use {0, 255} on disk and are mapped to {0, 1} on load.
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

from ..errors import DataError

MAGIC = b"PGT1"
_CODE_TO_DTYPE = {0: np.dtype("uint8"), 1: np.dtype("<f4")}
_DTYPE_TO_CODE = {np.dtype("uint8"): 0, np.dtype("float32"): 1}


def write_tensor(path: str | Path, array: np.ndarray) -> None:
    """Write an array as PGT1. Only uint8 and float32 are representable."""
    path = Path(path)
    dtype = np.dtype(array.dtype)
    if dtype not in _DTYPE_TO_CODE:
        raise DataError(f"dtype {dtype} is not representable in PGT1 (uint8/float32)")
    if array.ndim > 255:
        raise DataError(f"too many dimensions for PGT1: {array.ndim}")
    code = _DTYPE_TO_CODE[dtype]
    header = struct.pack("<4sBB", MAGIC, code, array.ndim)
    header += struct.pack(f"<{array.ndim}I", *array.shape)
    data = np.ascontiguousarray(array, dtype=_CODE_TO_DTYPE[code]).tobytes()
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(header + data)
    os.replace(tmp, path)


def read_tensor(path: str | Path) -> np.ndarray:
    """Read a PGT1 file back into a numpy array."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read tensor file {path}: {exc}") from exc
    if len(raw) < 6 or raw[:4] != MAGIC:
        raise DataError(f"{path} is not a PGT1 tensor file")
    code, ndim = struct.unpack_from("<BB", raw, 4)
    if code not in _CODE_TO_DTYPE:
        raise DataError(f"{path}: unknown PGT1 dtype code {code}")
    offset = 6
    if len(raw) < offset + 4 * ndim:
        raise DataError(f"{path}: truncated PGT1 header")
    shape = struct.unpack_from(f"<{ndim}I", raw, offset)
    offset += 4 * ndim
    dtype = _CODE_TO_DTYPE[code]
    expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    if len(raw) != offset + expected:
        raise DataError(
            f"{path}: payload size {len(raw) - offset} does not match header "
            f"({shape}, {dtype})"
        )
    return np.frombuffer(raw, dtype=dtype, offset=offset).reshape(shape).copy()


def _load_png(path: Path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im)


def load_image(path: str | Path) -> np.ndarray:
    """Load an image as float32 (C, H, W) in [0, 1], from PGT1 or PNG."""
    path = Path(path)
    if path.suffix == ".png":
        arr = _load_png(path)
        if arr.ndim == 2:
            arr = arr[None, :, :]
        elif arr.ndim == 3:
            arr = arr.transpose(2, 0, 1)
        else:
            raise DataError(f"{path}: unsupported PNG image layout {arr.shape}")
        return (arr.astype(np.float32) / 255.0).copy()
    arr = read_tensor(path)
    if arr.ndim == 2:
        arr = arr[None, :, :]
    if arr.ndim != 3:
        raise DataError(f"{path}: expected a (C, H, W) image, got shape {arr.shape}")
    if arr.dtype == np.uint8:
        return arr.astype(np.float32) / 255.0
    return arr.astype(np.float32, copy=False)


def load_mask(path: str | Path) -> np.ndarray:
    """Load a mask as uint8 (H, W) with values {0, 1}, from PGT1 or PNG."""
    path = Path(path)
    if path.suffix == ".png":
        arr = _load_png(path)
        if arr.ndim == 3:
            arr = arr[:, :, 0]
        arr = (arr >= 128).astype(np.uint8)
    else:
        arr = read_tensor(path)
        if arr.dtype != np.uint8:
            arr = (arr >= 0.5).astype(np.uint8)
    if arr.ndim != 2:
        raise DataError(f"{path}: expected a single-channel (H, W) mask")
    return arr


def save_image(path: str | Path, image: np.ndarray) -> None:
    """Save a (C, H, W) float image; PGT1 keeps float32, PNG quantizes to 8-bit."""
    path = Path(path)
    if image.ndim != 3:
        raise DataError(f"expected a (C, H, W) image, got shape {image.shape}")
    if path.suffix == ".png":
        from PIL import Image

        arr = np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)
        Image.fromarray(arr.transpose(1, 2, 0)).save(path)
    else:
        write_tensor(path, image.astype(np.float32, copy=False))


def save_mask(path: str | Path, mask: np.ndarray) -> None:
    """Save an (H, W) binary mask; PNG uses {0, 255}, PGT1 uses {0, 1}."""
    path = Path(path)
    if mask.ndim != 2:
        raise DataError(f"expected an (H, W) mask, got shape {mask.shape}")
    mask = mask.astype(np.uint8, copy=False)
    if path.suffix == ".png":
        from PIL import Image

        Image.fromarray(mask * 255).save(path)
    else:
        write_tensor(path, mask)
