"""Image IO: 8-bit PNG for color, a small raw format for depth grids.

Depth files: 8-byte header (width, height as uint32 little-endian) followed
by width*height float32 little-endian values, row-major from the top row.
Infinite depths (ray misses) are stored as the largest finite float32 and
restored to +inf on load.
"""

from __future__ import annotations

import struct

import numpy as np
from PIL import Image

Array = np.ndarray

_F32_MAX = np.float32(np.finfo(np.float32).max)


def save_png(path, image: Array) -> None:
    arr = np.clip(np.asarray(image), 0.0, 1.0)
    Image.fromarray((arr * 255.0 + 0.5).astype(np.uint8)).save(path, format="PNG")


def load_png(path) -> Array:
    return np.asarray(Image.open(path), dtype=np.float64) / 255.0


def save_depth(path, depth: Array) -> None:
    d = np.asarray(depth, dtype=np.float64)
    if d.ndim != 2:
        raise ValueError("depth must be a 2-d grid")
    stored = np.where(np.isfinite(d), d, _F32_MAX).astype("<f4")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<II", d.shape[1], d.shape[0]))
        fh.write(stored.tobytes())


def load_depth(path) -> Array:
    with open(path, "rb") as fh:
        header = fh.read(8)
        if len(header) != 8:
            raise ValueError(f"truncated depth file: {path}")
        w, h = struct.unpack("<II", header)
        body = fh.read(4 * w * h)
    if len(body) != 4 * w * h:
        raise ValueError(f"truncated depth file: {path}")
    d = np.frombuffer(body, dtype="<f4").reshape(h, w).astype(np.float64)
    return np.where(d >= float(_F32_MAX), np.inf, d)
