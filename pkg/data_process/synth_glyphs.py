"""
Procedural stand-in for BanglaLekha-Isolated.

Every class draws a distinct 3-stroke subset of a fixed primitive set (lines and
arcs on a 3x3 anchor grid); distinct subsets make classes distinguishable by
construction. Each sample then gets a random rotation (+-10 deg), scale and
translation (+-10%) and Gaussian pixel noise, all keyed by (seed, class, sample).
"""
import itertools
import logging
import math
from functools import lru_cache
from pathlib import Path
from typing import List, Tuple, Union

import numpy as np
from PIL import Image, ImageDraw

from utils.errors import DatasetIOError, RangeError, SplitError
from utils.image_io import encode_png
from utils.tensor_core import make_rng

logger = logging.getLogger(__name__)

CANVAS = 64
STROKE_WIDTH = 5
STROKES_PER_GLYPH = 3
NOISE_STD = 12.0
_LAYOUT_SEED = 20240

# ("line", x0, y0, x1, y1) or ("arc", left, top, right, bottom, start, end)
PRIMITIVES: List[Tuple] = [
    ("line", 16, 16, 48, 16), ("line", 16, 32, 48, 32), ("line", 16, 48, 48, 48),
    ("line", 16, 16, 16, 48), ("line", 32, 16, 32, 48), ("line", 48, 16, 48, 48),
    ("line", 16, 16, 48, 48), ("line", 48, 16, 16, 48),
    ("arc", 16, 8, 48, 40, 180, 360), ("arc", 16, 24, 48, 56, 0, 180),
    ("arc", 8, 16, 40, 48, 90, 270), ("arc", 24, 16, 56, 48, 270, 450),
    ("arc", 24, 24, 40, 40, 0, 360), ("arc", 12, 4, 28, 20, 0, 360),
]


@lru_cache(maxsize=1)
def _layout() -> Tuple[Tuple[int, ...], ...]:
    """
    Every 3-stroke subset, ordered so that the leading ones pairwise share at
    most one stroke; the rest follow in a fixed shuffled order.
    """
    combos = list(itertools.combinations(range(len(PRIMITIVES)), STROKES_PER_GLYPH))
    order = make_rng(_LAYOUT_SEED).permutation(len(combos))
    shuffled = [combos[int(i)] for i in order]
    sparse: List[Tuple[int, ...]] = []
    for combo in shuffled:
        if all(len(set(combo) & set(other)) <= 1 for other in sparse):
            sparse.append(combo)
    chosen = set(sparse)
    return tuple(sparse + [c for c in shuffled if c not in chosen])


def glyph_strokes(class_id: int) -> Tuple[int, ...]:
    """Primitive indices drawn for a class; distinct for every class id."""
    layout = _layout()
    if not 0 <= class_id < len(layout):
        raise RangeError(f"Synthetic glyphs support at most {len(layout)} classes.")
    return layout[class_id]


def _draw_glyph(class_id: int) -> Image.Image:
    img = Image.new("L", (CANVAS, CANVAS), color=255)
    draw = ImageDraw.Draw(img)
    for idx in glyph_strokes(class_id):
        prim = PRIMITIVES[idx]
        if prim[0] == "line":
            draw.line(prim[1:5], fill=0, width=STROKE_WIDTH)
        else:
            draw.arc(prim[1:5], start=prim[5], end=prim[6], fill=0, width=STROKE_WIDTH)
    return img


def _jitter(glyph: Image.Image, rng: np.random.Generator) -> np.ndarray:
    angle = math.radians(rng.uniform(-10.0, 10.0))
    scale = rng.uniform(0.9, 1.1)
    tx, ty = rng.uniform(-0.1, 0.1, size=2) * CANVAS
    cx = cy = CANVAS / 2.0

    # Inverse map (output -> input) for PIL's affine transform
    cos, sin = math.cos(angle) / scale, math.sin(angle) / scale
    a, b, d, e = cos, sin, -sin, cos
    c = cx - a * (cx + tx) - b * (cy + ty)
    f = cy - d * (cx + tx) - e * (cy + ty)
    warped = glyph.transform((CANVAS, CANVAS), Image.Transform.AFFINE, (a, b, c, d, e, f),
                             resample=Image.Resampling.BILINEAR, fillcolor=255)

    pixels = np.asarray(warped, dtype=np.float64) + rng.normal(0.0, NOISE_STD, size=(CANVAS, CANVAS))
    return np.clip(np.rint(pixels), 0, 255).astype(np.uint8)


def synth_dataset(out: Union[str, Path], classes: int = 84, per_class: int = 50, seed: int = 0) -> Path:
    """
    Writes `<out>/<1..classes>/<class>_<k>.png`.

    Args:
        out (str|Path): Destination root (created if missing).
        classes (int): Number of class folders.
        per_class (int): Images per class, >= 2 so the set can be split.
        seed (int): Sample-level randomness; the glyph layout itself is fixed.
    """
    if per_class < 2:
        raise SplitError(f"per_class must be >= 2 so every class can be split, got {per_class}.")
    if classes < 1:
        raise RangeError(f"classes must be >= 1, got {classes}.")
    root = Path(out)
    try:
        root.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise DatasetIOError(f"Cannot create dataset root {root}: {e}")

    for class_id in range(classes):
        glyph = _draw_glyph(class_id)
        class_dir = root / str(class_id + 1)
        try:
            class_dir.mkdir(exist_ok=True)
        except OSError as e:
            raise DatasetIOError(f"Cannot create {class_dir}: {e}")
        for k in range(per_class):
            pixels = _jitter(glyph, make_rng([seed, class_id, k]))
            encode_png(pixels, class_dir / f"{class_id + 1}_{k:04d}.png")
    logger.info(f"Wrote {classes * per_class} synthetic images to {root}.")
    return root
