from pathlib import Path

import numpy as np
import pytest

from data_process.synth_glyphs import synth_dataset
from utils.tensor_core import make_rng


@pytest.fixture
def rng() -> np.random.Generator:
    return make_rng(1234)


@pytest.fixture
def synth_root(tmp_path: Path) -> Path:
    """6 classes x 6 images of procedural glyphs."""
    return synth_dataset(tmp_path / "synth", classes=6, per_class=6, seed=3)


@pytest.fixture
def write_gray(tmp_path: Path):
    """Writes a grayscale PNG into <tmp>/<class>/<name> and returns its path."""
    from utils.image_io import encode_png

    def _write(class_dir: str, name: str, pixels: np.ndarray) -> Path:
        folder = tmp_path / "tree" / class_dir
        folder.mkdir(parents=True, exist_ok=True)
        return encode_png(pixels.astype(np.uint8), folder / name)

    return _write
