import json
import logging
import re
from collections import Counter, deque
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Deque, Dict, Iterator, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from PIL import Image, UnidentifiedImageError
from pydantic import BaseModel, ConfigDict, Field

from data_process.preprocess import TARGET_SIZE, preprocess_pipeline, to_grayscale
from schema.record_schema import IndexEntry
from utils.errors import AkhcrError, DatasetIOError, FormatError, RangeError, SplitError
from utils.image_io import IMAGE_SUFFIXES, decode_image
from utils.tensor_core import Tensor, make_rng

logger = logging.getLogger(__name__)

# --- CONFIGURATION ---
MANIFEST_NAME = "classes.txt"
INDEX_MAGIC = "# akhcr-index v1"
DEFAULT_VAL_FRACTION = 0.28
DEFAULT_BLANK_THRESHOLD = 0.02

Split = Literal["train", "val"]


class DatasetIndex(BaseModel):
    entries: List[IndexEntry] = Field(default_factory=list)
    class_names: List[str] = Field(default_factory=list)
    seed: Optional[int] = None
    val_fraction: Optional[float] = None

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def counts_per_class(self, split: Optional[Split] = None) -> Dict[int, int]:
        counts = Counter(e.class_id for e in self.entries if split is None or e.split == split)
        return {cid: counts.get(cid, 0) for cid in range(self.n_classes)}

    def select(self, split: Split) -> List[IndexEntry]:
        return [e for e in self.entries if e.split == split]


class Batch(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    images: Tensor = Field(..., description="(N, 32, 32, 1)")
    labels: Tensor = Field(..., description="(N,) class ids")


# --- HELPER FUNCTIONS ---

def _class_sort_key(name: str) -> Tuple[int, int, str]:
    """Numeric names first (by value), then everything else lexically."""
    if re.fullmatch(r"\d+", name):
        return (0, int(name), name)
    return (1, 0, name)


def _is_readable_image(path: Path) -> bool:
    """Header-only check; full decoding happens in filter_blank / batches."""
    if path.suffix.lower() not in IMAGE_SUFFIXES or not path.is_file():
        return False
    try:
        with Image.open(path) as img:
            return img.format in ("PNG", "BMP")
    except (UnidentifiedImageError, OSError):
        return False


def _read_manifest(path: Path) -> List[str]:
    names = [line.strip() for line in path.read_text(encoding="utf-8").splitlines()]
    return [n for n in names if n and not n.startswith("#")]


# --- CORE OPERATIONS ---

def scan_dataset(root: Union[str, Path], manifest: Optional[Union[str, Path]] = None) -> DatasetIndex:
    """
    Catalogs `<root>/<class_dir>/<image files>` into an unsplit index.

    Args:
        root (str|Path): Dataset root holding one directory per class.
        manifest (str|Path, optional): File listing class directory names, one per
            line. Defaults to `<root>/classes.txt` when present; otherwise every
            numerically named directory is a class.

    Returns:
        DatasetIndex: entries with class ids 0..n-1 and no split assignment.
    """
    root_path = Path(root)
    if not root_path.is_dir():
        raise DatasetIOError(f"Dataset root not found: {root_path.resolve()}")

    manifest_path = Path(manifest) if manifest else root_path / MANIFEST_NAME
    subdirs = {p.name: p for p in root_path.iterdir() if p.is_dir()}
    if manifest_path.is_file():
        class_names = _read_manifest(manifest_path)
        for name in class_names:
            if name not in subdirs:
                logger.warning(f"Manifest class '{name}' has no directory under {root_path}.")
    else:
        class_names = sorted((n for n in subdirs if re.fullmatch(r"\d+", n)), key=_class_sort_key)
    known = set(class_names)
    for name in sorted(subdirs):
        if name not in known:
            logger.warning(f"Skipping unknown directory '{name}' (not a class).")

    if not class_names:
        raise DatasetIOError(f"No class directories under {root_path.resolve()}")

    entries: List[IndexEntry] = []
    for class_id, name in enumerate(class_names):
        class_dir = subdirs.get(name)
        files = sorted(class_dir.iterdir()) if class_dir is not None else []
        found = [f for f in files if _is_readable_image(f)]
        if not found:
            logger.warning(f"Class '{name}' has no readable images.")
        entries.extend(IndexEntry(path=str(f), class_id=class_id) for f in found)

    logger.info(f"Scanned {len(entries)} images in {len(class_names)} classes under {root_path}.")
    return DatasetIndex(entries=entries, class_names=class_names)


def image_std(path: Union[str, Path]) -> float:
    """Standard deviation of the grayscale pixels on a [0, 1] scale."""
    gray = to_grayscale(decode_image(path))
    return float(np.std(gray.pixels.astype(np.float64) / 255.0))


def filter_blank(index: DatasetIndex, threshold: float = DEFAULT_BLANK_THRESHOLD,
                 workers: int = 1) -> DatasetIndex:
    """Drops near-constant (blank) images and anything that fails to decode."""
    if not 0.0 < threshold < 1.0:
        raise RangeError(f"Blank threshold must be in (0, 1), got {threshold}.")

    def measure(entry: IndexEntry) -> Optional[float]:
        try:
            return image_std(entry.path)
        except AkhcrError as e:
            logger.warning(f"Dropping undecodable image: {e}")
            return None

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        stds = list(pool.map(measure, index.entries))

    kept = []
    for entry, std in zip(index.entries, stds):
        if std is None:
            continue
        if std < threshold:
            logger.info(f"Removed blank image (std={std:.4f}): {entry.path}")
            continue
        kept.append(entry)
    removed = len(index.entries) - len(kept)
    if removed:
        logger.warning(f"Blank filter removed {removed} of {len(index.entries)} images.")
    return index.model_copy(update={"entries": kept})


def split(index: DatasetIndex, val_fraction: float = DEFAULT_VAL_FRACTION, seed: int = 0) -> DatasetIndex:
    """
    Stratified split: each class is shuffled by (seed, class id) and its first
    round(val_fraction * n) entries go to validation.
    """
    if not 0.0 < val_fraction < 1.0:
        raise RangeError(f"val_fraction must be in (0, 1), got {val_fraction}.")
    by_class: Dict[int, List[IndexEntry]] = {cid: [] for cid in range(index.n_classes)}
    for entry in index.entries:
        by_class[entry.class_id].append(entry)

    assigned: List[IndexEntry] = []
    for class_id, members in by_class.items():
        name = index.class_names[class_id]
        if not members:
            logger.warning(f"Class '{name}' is empty; it will be absent from both splits.")
            continue
        if len(members) < 2:
            raise SplitError(f"Class '{name}' has {len(members)} image(s); a split needs at least 2.")
        members = sorted(members, key=lambda e: e.path)
        order = make_rng([seed, class_id]).permutation(len(members))
        n_val = int(np.floor(val_fraction * len(members) + 0.5))
        n_val = min(max(n_val, 1), len(members) - 1)
        for rank, pos in enumerate(order):
            split_name = "val" if rank < n_val else "train"
            assigned.append(members[pos].model_copy(update={"split": split_name}))

    assigned.sort(key=lambda e: (e.class_id, e.path))
    return DatasetIndex(entries=assigned, class_names=list(index.class_names),
                        seed=seed, val_fraction=val_fraction)


# --- INDEX FILE ---

def write_index(index: DatasetIndex, path: Union[str, Path]) -> Path:
    """Tab-separated catalog with a commented header (seed, fraction, class names)."""
    path = Path(path)
    header = [
        INDEX_MAGIC,
        f"# seed={'' if index.seed is None else index.seed}\tval_fraction="
        f"{'' if index.val_fraction is None else index.val_fraction}",
        f"# classes={json.dumps(index.class_names, ensure_ascii=False)}",
    ]
    df = pd.DataFrame(
        [(e.path, e.class_id, e.split or "") for e in index.entries],
        columns=["path", "class", "split"],
    )
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write("\n".join(header) + "\n")
            df.to_csv(f, sep="\t", index=False, lineterminator="\n")
    except OSError as e:
        raise DatasetIOError(f"Cannot write index {path}: {e}")
    return path


def read_index(path: Union[str, Path]) -> DatasetIndex:
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            header = [f.readline().rstrip("\n") for _ in range(3)]
    except OSError as e:
        raise DatasetIOError(f"Cannot read index {path}: {e}")
    if header[0] != INDEX_MAGIC or not header[2].startswith("# classes="):
        raise FormatError("Not an index file", path)

    try:
        fields = dict(part.split("=", 1) for part in header[1].lstrip("# ").split("\t"))
        seed = int(fields["seed"]) if fields.get("seed") else None
        val_fraction = float(fields["val_fraction"]) if fields.get("val_fraction") else None
    except ValueError:
        raise FormatError(f"Bad index header line '{header[1]}'", path)

    try:
        class_names = json.loads(header[2][len("# classes="):])
    except json.JSONDecodeError as e:
        raise FormatError(f"Bad class list: {e}", path)
    df = pd.read_csv(path, sep="\t", skiprows=3, dtype={"path": str, "class": int, "split": str},
                     keep_default_na=False)
    entries = [IndexEntry(path=p, class_id=int(c), split=s or None)
               for p, c, s in zip(df["path"], df["class"], df["split"])]
    return DatasetIndex(entries=entries, class_names=class_names, seed=seed, val_fraction=val_fraction)


# --- BATCH STREAMING ---

def _load_batch(entries: Sequence[IndexEntry], size: int) -> Optional[Batch]:
    images, labels = [], []
    for entry in entries:
        try:
            images.append(preprocess_pipeline(decode_image(entry.path), size))
            labels.append(entry.class_id)
        except AkhcrError as e:
            logger.warning(f"Skipping sample: {e}")
    if not images:
        return None
    return Batch(images=np.stack(images), labels=np.asarray(labels, dtype=np.int64))


def batches(index: DatasetIndex, split_name: Split, batch_size: int,
            epoch_seed: Optional[Union[int, Sequence[int]]] = None,
            prefetch_depth: int = 4, workers: int = 1, size: int = TARGET_SIZE) -> Iterator[Batch]:
    """
    Streams preprocessed mini-batches of one split.

    The order is fixed by `epoch_seed` before any work is handed to the pool
    (None keeps index order), so batch order is independent of `workers`. At
    most `prefetch_depth` decoded batches exist at once.
    """
    if batch_size < 1:
        raise RangeError(f"batch_size must be >= 1, got {batch_size}.")
    members = index.select(split_name)
    if epoch_seed is not None:
        members = [members[i] for i in make_rng(epoch_seed).permutation(len(members))]
    chunks = [members[i:i + batch_size] for i in range(0, len(members), batch_size)]

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        pending: Deque = deque()
        next_chunk = 0
        while next_chunk < len(chunks) or pending:
            while next_chunk < len(chunks) and len(pending) < prefetch_depth:
                pending.append(pool.submit(_load_batch, chunks[next_chunk], size))
                next_chunk += 1
            batch = pending.popleft().result()
            if batch is not None:
                yield batch


def load_split(index: DatasetIndex, split_name: Split, size: int = TARGET_SIZE,
               workers: int = 1) -> Batch:
    """Entire split as one in-memory batch, in index order."""
    parts = [b for b in batches(index, split_name, batch_size=256, epoch_seed=None, workers=workers, size=size)]
    if not parts:
        raise DatasetIOError(f"Split '{split_name}' has no decodable images.")
    return Batch(images=np.concatenate([p.images for p in parts]),
                 labels=np.concatenate([p.labels for p in parts]))
