"""Greyscale portable float maps (the Middlebury disparity format).

Layout: ``Pf\\n<width> <height>\\n<scale>\\n`` followed by ``width*height``
float32 samples, last image row first. A negative scale marks a
little-endian payload, a positive one big-endian.
"""

from __future__ import annotations

import os
from typing import Tuple

import numpy as np

from ._atomic import atomic_write


class PFMError(ValueError):
    """Malformed or truncated PFM data; ``offset`` is the byte position of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


def _next_token(buf: bytes, pos: int) -> Tuple[bytes, int, int]:
    """Return (token, start, end) skipping leading whitespace."""
    n = len(buf)
    while pos < n and buf[pos : pos + 1].isspace():
        pos += 1
    start = pos
    while pos < n and not buf[pos : pos + 1].isspace():
        pos += 1
    return buf[start:pos], start, pos


def parse_pfm(buf: bytes) -> Tuple[np.ndarray, float]:
    magic, start, pos = _next_token(buf, 0)
    if magic != b"Pf":
        if magic == b"PF":
            raise PFMError("colour PFM ('PF') is not a disparity map; expected 'Pf'", start)
        raise PFMError(f"bad magic {magic[:8]!r}, expected b'Pf'", start)
    dims = []
    for what in ("width", "height"):
        tok, start, pos = _next_token(buf, pos)
        try:
            val = int(tok)
        except ValueError:
            raise PFMError(f"cannot parse {what} from {tok[:16]!r}", start) from None
        if val <= 0:
            raise PFMError(f"{what} must be positive, got {val}", start)
        dims.append(val)
    tok, start, pos = _next_token(buf, pos)
    try:
        scale = float(tok)
    except ValueError:
        raise PFMError(f"cannot parse scale from {tok[:16]!r}", start) from None
    if scale == 0 or not np.isfinite(scale):
        raise PFMError(f"scale must be finite and non-zero, got {scale}", start)
    # exactly one whitespace byte separates the header from the raster
    if pos >= len(buf) or not buf[pos : pos + 1].isspace():
        raise PFMError("header not terminated by whitespace", pos)
    pos += 1
    width, height = dims
    need = 4 * width * height
    have = len(buf) - pos
    if have < need:
        raise PFMError(f"truncated payload: need {need} bytes, found {have}", pos + have)
    if have > need:
        raise PFMError(f"{have - need} trailing bytes after payload", pos + need)
    dtype = "<f4" if scale < 0 else ">f4"
    data = np.frombuffer(buf, dtype=dtype, count=width * height, offset=pos).reshape(height, width)
    return np.flipud(data).astype(np.float32), abs(scale)


def read_pfm(path) -> Tuple[np.ndarray, float]:
    """Returns ``(field [H, W] float32, |scale|)`` with rows top-down."""
    with open(path, "rb") as fh:
        return parse_pfm(fh.read())


def encode_pfm(field, scale: float = 1.0) -> bytes:
    arr = np.asarray(field, dtype=np.float32)
    if arr.ndim == 3 and arr.shape[0] == 1:
        arr = arr[0]
    if arr.ndim != 2:
        raise ValueError(f"PFM disparity must be 2-D, got shape {arr.shape}")
    if scale <= 0:
        raise ValueError("scale must be positive; endianness is encoded by the writer")
    H, W = arr.shape
    header = f"Pf\n{W} {H}\n{-float(scale)!r}\n".encode("ascii")
    return header + np.ascontiguousarray(np.flipud(arr), dtype="<f4").tobytes()


def write_pfm(field, path, scale: float = 1.0) -> None:
    """Little-endian, bottom-up rows. Written atomically."""
    atomic_write(os.fspath(path), encode_pfm(field, scale))
