"""
Grayscale -> bilinear resize to 32x32 -> [0, 1] normalization.

Resizing uses align-corners sampling: output pixel (i, j) reads the source at
(i * (H-1) / (out_h-1), j * (W-1) / (out_w-1)), the centre when an output
extent is 1. Each sample interpolates along x between its four neighbours
Q11, Q21 (row y1) and Q12, Q22 (row y2), then along y.
"""
from typing import Union

import numpy as np

from schema.image_schema import RawImage
from utils.errors import FormatError
from utils.tensor_core import Tensor

TARGET_SIZE = 32
LUMA = (0.299, 0.587, 0.114)


def to_grayscale(img: RawImage) -> RawImage:
    if img.channels == 1:
        return img
    if img.channels != 3:
        raise FormatError(f"Unsupported channel count {img.channels}; expected 1 or 3.")
    rgb = img.pixels.astype(np.float64)
    luma = LUMA[0] * rgb[..., 0] + LUMA[1] * rgb[..., 1] + LUMA[2] * rgb[..., 2]
    # round half up
    gray = np.clip(np.floor(luma + 0.5), 0, 255).astype(np.uint8)
    return RawImage.from_array(gray)


def _sample_coords(n_in: int, n_out: int) -> np.ndarray:
    if n_out == 1:
        return np.array([(n_in - 1) / 2.0])
    scale = (n_in - 1) / (n_out - 1)
    return np.arange(n_out, dtype=np.float64) * scale


def bilinear_resize(img: Union[RawImage, np.ndarray], out_w: int, out_h: int) -> np.ndarray:
    """Resizes a single-channel image or real (H, W) grid; returns a float64 (out_h, out_w) grid."""
    if isinstance(img, RawImage):
        if img.channels != 1:
            raise FormatError("bilinear_resize expects a single-channel image.")
        grid = img.pixels[:, :, 0].astype(np.float64)
    else:
        grid = np.asarray(img, dtype=np.float64)
    if grid.ndim != 2 or grid.size == 0:
        raise FormatError(f"bilinear_resize expects a non-empty 2-D grid, got shape {grid.shape}.")
    if out_w < 1 or out_h < 1:
        raise FormatError(f"Output size must be >= 1, got {out_w}x{out_h}.")
    h, w = grid.shape

    y = _sample_coords(h, out_h)
    x = _sample_coords(w, out_w)
    y1 = np.floor(y).astype(np.int64)
    x1 = np.floor(x).astype(np.int64)
    y2 = np.minimum(y1 + 1, h - 1)
    x2 = np.minimum(x1 + 1, w - 1)
    ty = (y - y1)[:, None]
    tx = (x - x1)[None, :]

    q11 = grid[y1[:, None], x1[None, :]]
    q21 = grid[y1[:, None], x2[None, :]]
    q12 = grid[y2[:, None], x1[None, :]]
    q22 = grid[y2[:, None], x2[None, :]]

    # x-direction first (rows y1 and y2), then y-direction
    f_y1 = (1.0 - tx) * q11 + tx * q21
    f_y2 = (1.0 - tx) * q12 + tx * q22
    out = (1.0 - ty) * f_y1 + ty * f_y2
    # convex combination: keep rounding inside the source range
    return np.clip(out, grid.min(), grid.max())


def normalize(grid: np.ndarray) -> np.ndarray:
    grid = np.asarray(grid, dtype=np.float64)
    if grid.size and (grid.min() < 0.0 or grid.max() > 255.0):
        raise FormatError(f"Pixel values must lie in [0, 255], got [{grid.min()}, {grid.max()}].")
    return grid / 255.0


def preprocess_pipeline(img: RawImage, size: int = TARGET_SIZE) -> Tensor:
    """RawImage -> (size, size, 1) float32 tensor in [0, 1]."""
    gray = to_grayscale(img)
    resized = bilinear_resize(gray, size, size)
    return normalize(resized)[:, :, None].astype(np.float32)
