from pathlib import Path
from typing import Union

import numpy as np
from PIL import Image, UnidentifiedImageError

from schema.image_schema import RawImage
from utils.errors import DatasetIOError, FormatError

IMAGE_SUFFIXES = {".png", ".bmp"}
_ACCEPTED_FORMATS = {"PNG", "BMP"}
_ALPHA_MODES = {"RGBA", "RGBa", "LA", "La", "PA"}
_WIDE_GRAY_MODES = {"I", "I;16", "I;16L", "I;16B"}


def is_image_file(path: Path) -> bool:
    return path.is_file() and path.suffix.lower() in IMAGE_SUFFIXES


def _to_8bit(img: Image.Image) -> np.ndarray:
    if img.mode in ("L", "RGB"):
        return np.asarray(img, dtype=np.uint8)
    if img.mode in _WIDE_GRAY_MODES:
        # 16-bit samples keep their top byte
        wide = np.clip(np.asarray(img, dtype=np.int64), 0, 65535)
        return (wide >> 8).astype(np.uint8)
    if img.mode in _ALPHA_MODES or "transparency" in img.info:
        rgba = img.convert("RGBA")
        flat = Image.alpha_composite(Image.new("RGBA", rgba.size, (255, 255, 255, 255)), rgba)
        return np.asarray(flat.convert("L" if img.mode in ("LA", "La") else "RGB"), dtype=np.uint8)
    if img.mode in ("1", "F"):
        return np.asarray(img.convert("L"), dtype=np.uint8)
    return np.asarray(img.convert("RGB"), dtype=np.uint8)


def decode_image(path: Union[str, Path]) -> RawImage:
    """
    Decodes a PNG/BMP file into a 1- or 3-channel 8-bit RawImage.
    16-bit grayscale is scaled down to 8 bits, transparent pixels are
    composited onto white, and palette or bilevel images are converted.
    Anything Pillow cannot read becomes a FormatError carrying the path.
    """
    path = Path(path)
    try:
        with Image.open(path) as img:
            if img.format not in _ACCEPTED_FORMATS:
                raise FormatError(f"Unsupported image format '{img.format}'", path)
            pixels = _to_8bit(img)
    except FileNotFoundError:
        raise DatasetIOError(f"Image not found: {path}")
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as e:
        if isinstance(e, FormatError):
            raise
        raise FormatError(f"Cannot decode image: {e}", path)
    return RawImage.from_array(pixels)


def encode_png(pixels: np.ndarray, path: Union[str, Path]) -> Path:
    """Writes a uint8 (H, W) or (H, W, 3) array as PNG."""
    path = Path(path)
    arr = np.asarray(pixels, dtype=np.uint8)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    try:
        Image.fromarray(arr).save(path, format="PNG", optimize=False)
    except OSError as e:
        raise DatasetIOError(f"Cannot write image {path}: {e}")
    return path
