import logging
from pathlib import Path
from typing import List, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict

from data_process.dataset_io import (DatasetIndex, batches, filter_blank, read_index, scan_dataset,
                                     split, write_index)
from data_process.preprocess import preprocess_pipeline
from data_process.synth_glyphs import synth_dataset
from evaluation.metrics import (ConfusionMatrix, confusion, emit_report_csv, group_summary,
                                merge_confusion, precision_recall_f1)
from network.akhcrnet import ModelGraph, ParamStore, forward, predict, restore_checkpoint
from network.objective import cce, softmax
from schema.record_schema import ClassReport, RankedClass
from schema.run_schema import RunConfig
from utils.checkpoint_io import load_checkpoint
from utils.config_loader import write_run_config
from utils.errors import ConfigError, DatasetIOError, SplitError
from utils.image_io import decode_image

logger = logging.getLogger(__name__)

INDEX_NAME = "index.tsv"
REPORT_NAME = "report.csv"
CONFUSION_NAME = "confusion.csv"


class SplitEvaluation(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    loss: float
    accuracy: float
    count: int
    matrix: ConfusionMatrix


# --- SHARED HELPERS ---

def prepare_index(cfg: RunConfig) -> DatasetIndex:
    """Reuses a split index file when given, otherwise scan -> blank filter -> split."""
    if cfg.index_path:
        index = read_index(cfg.index_path)
        if any(e.split is None for e in index.entries):
            raise SplitError(f"Index {cfg.index_path} has entries without a split assignment.")
        print(f"--- Loaded split index {cfg.index_path}: {len(index.entries)} images ---")
        return index
    if cfg.data_root is None:
        raise ConfigError("Either a data root or --index is required.")
    index = scan_dataset(cfg.data_root)
    index = filter_blank(index, cfg.blank_threshold, workers=cfg.workers)
    index = split(index, cfg.val_fraction, cfg.seed)
    n_train, n_val = len(index.select("train")), len(index.select("val"))
    print(f"--- Split {len(index.entries)} images: {n_train} train / {n_val} val "
          f"({len(index.class_names)} classes) ---")
    return index


def evaluate_split(graph: ModelGraph, store: ParamStore, index: DatasetIndex, split_name: str,
                   batch_size: int, prefetch_depth: int = 4, workers: int = 1) -> SplitEvaluation:
    """Infer-mode pass: mean cross-entropy, accuracy and the merged confusion matrix."""
    n_classes = graph.spec.n_classes
    size = graph.spec.input_size
    loss_sum, count, parts = 0.0, 0, []
    for batch in batches(index, split_name, batch_size, epoch_seed=None,
                         prefetch_depth=prefetch_depth, workers=workers, size=size):
        logits, _ = forward(graph, store, batch.images, mode="infer")
        probs = softmax(logits.astype(np.float64))
        n = batch.labels.shape[0]
        loss_sum += cce(probs, batch.labels) * n
        count += n
        parts.append(confusion(batch.labels, probs.argmax(axis=1), n_classes))
    if count == 0:
        raise DatasetIOError(f"Split '{split_name}' has no decodable images.")
    matrix = merge_confusion(parts)
    accuracy = float(np.trace(matrix.counts)) / matrix.total
    return SplitEvaluation(loss=loss_sum / count, accuracy=accuracy, count=count, matrix=matrix)


def _load_model(checkpoint: Path) -> Tuple[ModelGraph, ParamStore, List[str]]:
    ckpt = load_checkpoint(checkpoint)
    graph, store, _ = restore_checkpoint(ckpt, checkpoint)
    names = ckpt.class_names or [str(i) for i in range(graph.spec.n_classes)]
    return graph, store, names


# --- COMMANDS ---

def run_synth(out: Path, classes: int, per_class: int, seed: int) -> int:
    root = synth_dataset(out, classes=classes, per_class=per_class, seed=seed)
    written = sum(1 for _ in root.glob("*/*.png"))
    print(f"--- Synthesized {classes} classes x {per_class} images ({written} files) under {root} ---")
    return written


def run_split(cfg: RunConfig) -> Path:
    """Scan, filter and split without training; writes index.tsv and run_config.txt."""
    index = prepare_index(cfg.model_copy(update={"index_path": None}))
    path = write_index(index, Path(cfg.out_dir) / INDEX_NAME)
    write_run_config(cfg, cfg.out_dir)
    for class_id, name in enumerate(index.class_names):
        n_val = index.counts_per_class("val")[class_id]
        n_all = index.counts_per_class()[class_id]
        logger.debug(f"class {name}: {n_all - n_val} train / {n_val} val")
    print(f"--- Index written to {path} ---")
    return path


def run_eval(cfg: RunConfig, checkpoint: Path) -> ClassReport:
    """Scores the validation split and writes report.csv and confusion.csv into the output dir."""
    graph, store, names = _load_model(checkpoint)
    index = prepare_index(cfg)
    if list(index.class_names) != list(names):
        raise ConfigError(f"Checkpoint classes ({len(names)}) do not match the dataset "
                          f"classes ({len(index.class_names)}).")

    result = evaluate_split(graph, store, index, "val", cfg.batch_size, cfg.prefetch_depth, cfg.workers)
    report = precision_recall_f1(result.matrix, names)
    out_dir = Path(cfg.out_dir)
    emit_report_csv(report, result.matrix, out_dir / REPORT_NAME, out_dir / CONFUSION_NAME)
    write_run_config(cfg, out_dir)

    print(f"--- Evaluated {result.count} validation images ---")
    print(f"accuracy:  {report.accuracy:.4f}")
    print(f"macro avg: precision {report.macro_precision:.4f}  recall {report.macro_recall:.4f}  "
          f"f1 {report.macro_f1:.4f}")
    print(f"val loss:  {result.loss:.4f}")
    groups = group_summary(result.matrix, names)
    if groups:
        frame = pd.DataFrame(sorted(groups.items()), columns=["group", "accuracy"])
        print(frame.to_string(index=False, float_format=lambda v: f"{v:.4f}"))
    if report.degenerate_classes:
        logger.warning(f"Degenerate classes: {', '.join(report.degenerate_classes)}")
    return report


def run_predict(checkpoint: Path, image_path: Path, topk: int = 5) -> List[RankedClass]:
    graph, store, names = _load_model(checkpoint)
    image = preprocess_pipeline(decode_image(image_path), graph.spec.input_size)
    ranked = predict(graph, store, image, topk=topk, class_names=names)
    for r in ranked:
        print(f"{r.rank},{r.class_name},{r.probability:.6f}")
    return ranked
