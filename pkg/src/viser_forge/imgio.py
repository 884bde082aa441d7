"""Image and G-buffer file I/O.

Color images travel as float arrays in [0,1]; masks as bool arrays. Depth
and face-id buffers use a little-endian raw binary format with a 16-byte
header: 4-byte magic ``VFGB``, uint32 width, uint32 height, uint32 dtype
code (1 = float32, 2 = int32).
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from PIL import Image

MAGIC = b"VFGB"
_DTYPE_CODES = {1: np.dtype("<f4"), 2: np.dtype("<i4")}
_CODE_FOR_KIND = {"f": 1, "i": 2}


def save_rgb_png(image: np.ndarray, path) -> None:
    """Save an (H, W, 3) float [0,1] array as 8-bit PNG."""
    arr = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    Image.fromarray((arr * 255.0 + 0.5).astype(np.uint8), mode="RGB").save(path)


def load_rgb_png(path) -> np.ndarray:
    """Load an image file as (H, W, 3) float in [0,1]."""
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0


def save_rgb_ppm(image: np.ndarray, path) -> None:
    """Save an (H, W, 3) float [0,1] array as binary PPM (P6)."""
    arr = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    data = (arr * 255.0 + 0.5).astype(np.uint8)
    h, w = data.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def save_mask_png(mask: np.ndarray, path) -> None:
    """Save a bool (H, W) mask as single-channel PNG with values 0/255."""
    data = np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8)
    Image.fromarray(data, mode="L").save(path)


def load_mask_png(path) -> np.ndarray:
    """Load a single-channel mask PNG; nonzero pixels are True."""
    with Image.open(path) as img:
        return np.asarray(img.convert("L")) > 0


def save_label_png(labels: np.ndarray, path) -> None:
    """Save an int label map as 16-bit PNG, stored as label + 2.

    The +2 offset keeps the -1 (unlabeled) and -2 (outside islands)
    sentinels representable in an unsigned image.
    """
    shifted = np.asarray(labels, dtype=np.int64) + 2
    if shifted.min() < 0 or shifted.max() > 0xFFFF:
        raise ValueError("label values outside 16-bit range after +2 shift")
    Image.fromarray(shifted.astype(np.uint16), mode="I;16").save(path)


def load_label_png(path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img, dtype=np.int64).astype(np.int32) - 2


def save_buffer(buf: np.ndarray, path) -> None:
    """Write a float32 or int32 2D buffer in the raw VFGB format."""
    buf = np.asarray(buf)
    if buf.ndim != 2:
        raise ValueError(f"buffer must be 2D, got shape {buf.shape}")
    code = _CODE_FOR_KIND.get(buf.dtype.kind)
    if code is None:
        raise ValueError(f"unsupported buffer dtype {buf.dtype}")
    data = buf.astype(_DTYPE_CODES[code])
    h, w = buf.shape
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<III", w, h, code))
        fh.write(data.tobytes())


def load_buffer(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:4] != MAGIC:
        raise ValueError(f"not a VFGB buffer: {path}")
    w, h, code = struct.unpack("<III", raw[4:16])
    dtype = _DTYPE_CODES.get(code)
    if dtype is None:
        raise ValueError(f"unknown dtype code {code} in {path}")
    expected = 16 + w * h * 4
    if len(raw) != expected:
        raise ValueError(f"truncated buffer {path}: {len(raw)} != {expected} bytes")
    return np.frombuffer(raw, dtype=dtype, offset=16).reshape(h, w).copy()
