"""Raster I/O for PNG and PGM/PPM (ASCII or binary, 8 or 16 bit).

Decoded values are returned unscaled as float64 grids; ranks do not care
about the bit depth.  Decoding is delegated to OpenCV after a magic-byte
check restricts input to the supported formats.
"""

from __future__ import annotations

from pathlib import Path

import cv2
import numpy as np

from .errors import DecodeError

_PNG_MAGIC = b"\x89PNG\r\n\x1a\n"
_PNM_MAGICS = (b"P2", b"P3", b"P5", b"P6")

LUMA = (0.299, 0.587, 0.114)


def decode_image(path) -> list[np.ndarray]:
    """One grid for grayscale input, three (R, G, B) for colour."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise DecodeError(f"cannot read {path}: {exc}") from exc
    if not (data.startswith(_PNG_MAGIC) or data[:2] in _PNM_MAGICS):
        raise DecodeError(f"{path}: not a PNG/PGM/PPM file")
    arr = cv2.imdecode(np.frombuffer(data, dtype=np.uint8), cv2.IMREAD_UNCHANGED)
    if arr is None:
        raise DecodeError(f"{path}: corrupt image data")
    if arr.ndim == 2:
        return [arr.astype(np.float64)]
    if arr.ndim == 3 and arr.shape[2] in (3, 4):
        bgr = arr[..., :3].astype(np.float64)
        return [bgr[..., 2].copy(), bgr[..., 1].copy(), bgr[..., 0].copy()]
    raise DecodeError(f"{path}: unsupported layout {arr.shape}")


def luminance(channels: list[np.ndarray]) -> np.ndarray:
    if len(channels) == 1:
        return channels[0]
    r, g, b = channels
    return LUMA[0] * r + LUMA[1] * g + LUMA[2] * b


def to_uint(values, bits: int = 16) -> np.ndarray:
    """Monotone min-max rescale onto the full unsigned range of ``bits``."""
    v = np.asarray(values, dtype=np.float64)
    top = (1 << bits) - 1
    lo, hi = float(v.min()), float(v.max())
    if hi == lo:
        scaled = np.zeros_like(v)
    else:
        scaled = np.floor((v - lo) / (hi - lo) * top + 0.5)
    return scaled.astype(np.uint16 if bits == 16 else np.uint8)


def write_image(path, channels, bits: int | None = None) -> None:
    """Write one grid (grayscale) or three (RGB) to PNG/PGM/PPM by suffix.

    Integer-valued grids that already fit in 8 (or 16) bits are written
    verbatim; anything else is min-max rescaled to 16 bits.
    """
    if isinstance(channels, np.ndarray) and channels.ndim == 2:
        channels = [channels]
    grids = [np.asarray(c, dtype=np.float64) for c in channels]
    stacked = np.stack(grids, axis=-1)
    integral = np.array_equal(stacked, np.round(stacked)) and stacked.min() >= 0
    if bits is None:
        if integral and stacked.max() <= 255:
            bits = 8
        else:
            bits = 16
    if integral and stacked.max() < (1 << bits):
        out = stacked.astype(np.uint8 if bits == 8 else np.uint16)
    else:
        out = to_uint(stacked, bits)
    if out.shape[-1] == 3:
        out = out[..., ::-1]
    else:
        out = out[..., 0]
    ok = cv2.imwrite(str(path), np.ascontiguousarray(out))
    if not ok:
        raise OSError(f"failed to write {path}")
