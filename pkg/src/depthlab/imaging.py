"""Raster validation helpers and bit-exact PPM / PGM / PFM file I/O.

Images are ``float64`` arrays of shape ``(H, W, C)`` with ``C in (1, 3)`` and
values in ``[0, 1]``.  Scalar maps (depth, error maps, masks) are ``(H, W)``
``float64`` arrays; validity masks are ``(H, W)`` boolean arrays.
"""
from __future__ import annotations

import os
import struct

import numpy as np

GRAY_WEIGHTS = np.array([0.299, 0.587, 0.114])


class RasterFormatError(ValueError):
    """Raised for malformed or unsupported raster files."""


# -- validation --------------------------------------------------------------


def check_image(image, name: str = "image") -> np.ndarray:
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3 or arr.shape[2] not in (1, 3):
        raise ValueError(f"{name} must have shape (H, W, 1|3), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    if arr.min(initial=0.0) < 0.0 or arr.max(initial=0.0) > 1.0:
        raise ValueError(f"{name} values must lie in [0, 1]")
    return arr


def check_scalar_map(values, name: str = "map", positive: bool = False) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D (H, W), got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    if positive and not np.all(arr > 0):
        raise ValueError(f"{name} must be strictly positive")
    return arr


def check_mask(mask, name: str = "mask") -> np.ndarray:
    arr = np.asarray(mask)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D (H, W), got shape {arr.shape}")
    if arr.dtype != bool:
        if not np.all((arr == 0) | (arr == 1)):
            raise ValueError(f"{name} must be binary")
        arr = arr.astype(bool)
    return arr


def check_same_shape(a: np.ndarray, b: np.ndarray, what: str = "inputs") -> None:
    if a.shape != b.shape:
        raise ValueError(f"{what} differ in shape: {a.shape} vs {b.shape}")


# -- colour ------------------------------------------------------------------


def to_grayscale(image) -> np.ndarray:
    """ITU-R 601 luma replicated onto three channels."""
    img = check_image(image)
    if img.shape[2] != 3:
        raise ValueError("to_grayscale expects a 3-channel image")
    r, g, b = img[:, :, 0], img[:, :, 1], img[:, :, 2]
    # weights sum to one, so anchoring on blue keeps gray input exactly fixed
    luma = np.clip(b + GRAY_WEIGHTS[0] * (r - b) + GRAY_WEIGHTS[1] * (g - b), 0.0, 1.0)
    return np.repeat(luma[:, :, None], 3, axis=2)


def quantize8(image) -> np.ndarray:
    """Snap values to the 8-bit grid used at PPM boundaries."""
    return np.round(np.asarray(image, dtype=np.float64) * 255.0) / 255.0


# -- netpbm ------------------------------------------------------------------


def _read_header_tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    tokens: list[bytes] = []
    pos = 0
    n = len(data)
    while len(tokens) < count:
        while pos < n and data[pos : pos + 1].isspace():
            pos += 1
        if pos < n and data[pos : pos + 1] == b"#":
            while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise RasterFormatError("truncated header")
        tokens.append(data[start:pos])
    # exactly one whitespace byte separates maxval from the raster
    if pos >= n or not data[pos : pos + 1].isspace():
        raise RasterFormatError("truncated header")
    return tokens, pos + 1


def read_ppm(path) -> np.ndarray:
    """Read a binary P6 (RGB) or P5 (gray) file with maxval 255."""
    with open(path, "rb") as fh:
        data = fh.read()
    tokens, offset = _read_header_tokens(data, 4)
    magic = tokens[0]
    if magic not in (b"P6", b"P5"):
        raise RasterFormatError(f"unsupported magic {magic!r}")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise RasterFormatError("malformed header") from exc
    if width <= 0 or height <= 0:
        raise RasterFormatError("malformed header: non-positive dimensions")
    if maxval != 255:
        raise RasterFormatError(f"maxval must be 255, got {maxval}")
    channels = 3 if magic == b"P6" else 1
    size = width * height * channels
    payload = data[offset : offset + size]
    if len(payload) < size:
        raise RasterFormatError("truncated payload")
    arr = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, channels)
    return arr.astype(np.float64) / 255.0


def _to_bytes(image: np.ndarray) -> np.ndarray:
    return np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_ppm(image, path) -> None:
    img = check_image(image)
    magic = b"P6" if img.shape[2] == 3 else b"P5"
    h, w = img.shape[:2]
    with open(path, "wb") as fh:
        fh.write(magic + b"\n%d %d\n255\n" % (w, h))
        fh.write(_to_bytes(img).tobytes())


def read_pgm(path) -> np.ndarray:
    img = read_ppm(path)
    if img.shape[2] != 1:
        raise RasterFormatError("expected a P5 graymap")
    return img[:, :, 0]


def write_mask_pgm(mask, path) -> None:
    """Persist a binary mask as P5 with values {0, 255}."""
    m = np.asarray(mask)
    if m.ndim != 2:
        raise ValueError("mask must be 2-D")
    if not np.all((m == 0) | (m == 1)):
        raise ValueError("mask must be binary")
    h, w = m.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (w, h))
        fh.write((m.astype(np.uint8) * 255).tobytes())


def read_mask_pgm(path) -> np.ndarray:
    gray = read_pgm(path)
    if not np.all((gray == 0.0) | (gray == 1.0)):
        raise RasterFormatError("mask file contains values other than 0/255")
    return gray == 1.0


# -- PFM ---------------------------------------------------------------------


def read_pfm(path) -> np.ndarray:
    """Read a grayscale little-endian ``Pf`` file into an ``(H, W)`` map."""
    with open(path, "rb") as fh:
        data = fh.read()
    tokens, offset = _read_header_tokens(data, 4)
    if tokens[0] != b"Pf":
        raise RasterFormatError(f"expected 'Pf' grayscale PFM, got {tokens[0]!r}")
    try:
        width, height = int(tokens[1]), int(tokens[2])
        scale = float(tokens[3])
    except ValueError as exc:
        raise RasterFormatError("malformed PFM header") from exc
    if width <= 0 or height <= 0:
        raise RasterFormatError("wrong dims")
    if scale >= 0:
        raise RasterFormatError("big-endian PFM (positive scale) is not supported")
    size = width * height * 4
    payload = data[offset:]
    if len(payload) != size:
        raise RasterFormatError(f"wrong dims: expected {size} payload bytes, got {len(payload)}")
    arr = np.frombuffer(payload, dtype="<f4").reshape(height, width)
    # rows are stored bottom-to-top
    return np.flipud(arr).astype(np.float64)


def write_pfm(values, path) -> None:
    arr = check_scalar_map(values)
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(b"Pf\n%d %d\n-1.0\n" % (w, h))
        fh.write(np.ascontiguousarray(np.flipud(arr)).astype("<f4").tobytes())


def float_bits(x: float) -> bytes:
    """Little-endian IEEE-754 single-precision encoding of ``x``."""
    return struct.pack("<f", x)


def ensure_dir(path) -> str:
    os.makedirs(path, exist_ok=True)
    return str(path)
