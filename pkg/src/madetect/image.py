"""Image containers, field-of-view masking and raster I/O.

Images are plain numpy arrays: an RGB image is ``uint8`` with shape
``(height, width, 3)`` and a scalar field is ``float64`` with shape
``(height, width)``.  Pixel ``(x, y)`` lives at ``arr[y, x]``.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy import ndimage

FIELD_MAGIC = b"LCFF"
FIELD_HEADER = struct.Struct("<4sIII")

SUPPORTED_SUFFIXES = {".png", ".ppm", ".pgm", ".pnm"}


class ImageError(ValueError):
    """Raised for unreadable, unsupported or degenerate images."""


def load_image(path) -> np.ndarray:
    """Decode a PNG or binary PPM/PGM file into an ``(H, W, 3)`` uint8 array.

    Grayscale sources are replicated into three channels.
    """
    path = Path(path)
    if not path.is_file():
        raise ImageError(f"unreadable file: {path} does not exist")
    try:
        with Image.open(path) as im:
            if im.format not in ("PNG", "PPM"):
                raise ImageError(f"unsupported format: {im.format}")
            im.load()
            if im.mode in ("I;16", "I;16B", "I"):
                arr = np.asarray(im, dtype=np.float64)
                arr = np.round(arr / max(arr.max(), 1) * 255).astype(np.uint8)
                rgb = np.repeat(arr[:, :, None], 3, axis=2)
            else:
                rgb = np.asarray(im.convert("RGB"), dtype=np.uint8)
    except ImageError:
        raise
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise ImageError(f"unreadable file: {path} ({exc})") from exc
    if rgb.shape[0] == 0 or rgb.shape[1] == 0:
        raise ImageError(f"zero-dimension image: {path}")
    return np.ascontiguousarray(rgb)


def save_image(path, rgb: np.ndarray) -> None:
    """Write an RGB (or single-plane) uint8 array losslessly; format from suffix."""
    path = Path(path)
    arr = np.asarray(rgb, dtype=np.uint8)
    fmt = "PNG" if path.suffix.lower() == ".png" else "PPM"
    Image.fromarray(arr).save(path, format=fmt)


def green_channel(rgb: np.ndarray) -> np.ndarray:
    """Green plane scaled to [0, 1]."""
    return np.asarray(rgb)[:, :, 1].astype(np.float64) / 255.0


def fov_mask(rgb: np.ndarray, threshold: float = 0.06) -> np.ndarray:
    """Field-of-view mask of a fundus image.

    Pixels whose mean channel intensity (on a [0, 1] scale) exceeds
    `threshold` are kept; only the largest 4-connected component survives
    and its holes are filled.
    """
    mean = np.asarray(rgb, dtype=np.float64).mean(axis=2) / 255.0
    raw = mean > threshold
    if not raw.any():
        raise ImageError("empty mask: no pixel above the FOV threshold")
    labels, n = ndimage.label(raw)
    if n > 1:
        sizes = np.bincount(labels.ravel())
        sizes[0] = 0
        raw = labels == int(np.argmax(sizes))
    # background counts as 8-connected so that filled holes stay 4-connected to the FOV
    return ndimage.binary_fill_holes(raw, structure=np.ones((3, 3), bool))


def write_field(path, field: np.ndarray) -> None:
    """Dump a scalar field as little-endian float32 with a 16-byte LCFF header."""
    field = np.asarray(field)
    if field.ndim != 2:
        raise ValueError("field must be 2-D")
    h, w = field.shape
    with open(path, "wb") as fh:
        fh.write(FIELD_HEADER.pack(FIELD_MAGIC, w, h, 0))
        fh.write(np.ascontiguousarray(field, dtype="<f4").tobytes())


def read_field(path) -> np.ndarray:
    """Read a field written by :func:`write_field` (returned as float64)."""
    data = Path(path).read_bytes()
    if len(data) < FIELD_HEADER.size:
        raise ImageError(f"unreadable file: {path} is too short for a field header")
    magic, w, h, _ = FIELD_HEADER.unpack_from(data)
    if magic != FIELD_MAGIC:
        raise ImageError(f"unsupported format: bad magic {magic!r} in {path}")
    expected = FIELD_HEADER.size + 4 * w * h
    if len(data) != expected:
        raise ImageError(f"unreadable file: {path} has {len(data)} bytes, expected {expected}")
    arr = np.frombuffer(data, dtype="<f4", offset=FIELD_HEADER.size).reshape(h, w)
    return arr.astype(np.float64)
