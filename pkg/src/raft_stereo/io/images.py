"""8-bit image input and disparity visualisation."""

from __future__ import annotations

import io
import os

import numpy as np
from PIL import Image

from ._atomic import atomic_write


def read_image(path) -> np.ndarray:
    """PNG/PPM/... -> float32 ``[3, H, W]`` in [0, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def write_image(img: np.ndarray, path) -> None:
    """``[3, H, W]`` floats in [0, 1] -> 8-bit file (format from the extension)."""
    arr = np.clip(np.asarray(img).transpose(1, 2, 0) * 255.0 + 0.5, 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format=_format(path))
    atomic_write(os.fspath(path), buf.getvalue())


def _format(path) -> str:
    ext = os.path.splitext(os.fspath(path))[1].lower()
    return {".png": "PNG", ".ppm": "PPM", ".pnm": "PPM", ".jpg": "JPEG", ".jpeg": "JPEG"}.get(ext, "PNG")


def colorize(disp: np.ndarray, vmin=None, vmax=None, cmap: str = "magma"):
    """Map a disparity field to uint8 RGB with a fixed perceptual colormap.

    Returns ``(rgb [H, W, 3], vmin, vmax)``; non-finite pixels are black.
    """
    from matplotlib import colormaps

    disp = np.asarray(disp, dtype=np.float64)
    finite = np.isfinite(disp)
    if vmin is None:
        vmin = float(disp[finite].min()) if finite.any() else 0.0
    if vmax is None:
        vmax = float(disp[finite].max()) if finite.any() else 1.0
    span = vmax - vmin if vmax > vmin else 1.0
    t = np.clip((np.where(finite, disp, vmin) - vmin) / span, 0.0, 1.0)
    rgb = (colormaps[cmap](t)[..., :3] * 255.0 + 0.5).astype(np.uint8)
    rgb[~finite] = 0
    return rgb, vmin, vmax


def sidecar_path(png_path) -> str:
    return os.path.splitext(os.fspath(png_path))[0] + ".range.txt"


def write_disparity_png(disp: np.ndarray, path, cmap: str = "magma") -> str:
    """Colour-mapped PNG plus a ``<name>.range.txt`` sidecar with min/max. Returns the sidecar path."""
    rgb, vmin, vmax = colorize(disp, cmap=cmap)
    buf = io.BytesIO()
    Image.fromarray(rgb).save(buf, format="PNG")
    atomic_write(os.fspath(path), buf.getvalue())
    side = sidecar_path(path)
    atomic_write(side, f"colormap {cmap}\nmin {vmin!r}\nmax {vmax!r}\n".encode("ascii"))
    return side
