"""Image and float-map file formats.

Color images are 8-bit PNG.  Float maps (depth, curvature, normals) use a
small binary format: 8-byte magic b"QGSFMAP1", three little-endian uint32
(height, width, channels), then float32 data in row-major order.  The
conventional extension is .f32.
"""

import struct

import numpy as np
from PIL import Image

MAGIC = b"QGSFMAP1"


def save_f32(path, arr):
    arr = np.asarray(arr, dtype=np.float32)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ValueError("expected (H, W) or (H, W, C) array")
    h, w, c = arr.shape
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<III", h, w, c))
        f.write(np.ascontiguousarray(arr).tobytes())


def load_f32(path):
    with open(path, "rb") as f:
        magic = f.read(8)
        if magic != MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        h, w, c = struct.unpack("<III", f.read(12))
        data = np.frombuffer(f.read(4 * h * w * c), dtype="<f4")
    if data.size != h * w * c:
        raise ValueError(f"{path}: truncated payload")
    arr = data.reshape(h, w, c).astype(np.float64)
    return arr[:, :, 0] if c == 1 else arr


def save_png(path, img):
    """img: float array in [0, 1], (H, W) or (H, W, 3)."""
    arr = np.clip(np.asarray(img), 0.0, 1.0)
    data = (arr * 255.0 + 0.5).astype(np.uint8)
    Image.fromarray(data).save(path)


def load_png(path):
    img = np.asarray(Image.open(path), dtype=np.float64) / 255.0
    if img.ndim == 3 and img.shape[2] == 4:
        img = img[:, :, :3]
    return img
