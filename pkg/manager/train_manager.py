"""
Training loop: dataset split, per-epoch Adam passes under the phase schedule,
validation after every epoch, curves and checkpoints.

Per-epoch randomness is derived from (seed, epoch), so a run resumed from the
checkpoint of epoch k replays epochs k+1.. exactly as the uninterrupted run.
"""
import logging
import math
import time
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from data_process.dataset_io import DatasetIndex, batches, write_index
from manager.eval_manager import INDEX_NAME, evaluate_split, prepare_index
from network.akhcrnet import (ModelGraph, ParamStore, backward, build_akhcrnet, forward,
                              make_checkpoint, restore_checkpoint)
from network.optimizer import AdamState, adam_step, lr_for_epoch
from schema.record_schema import CurveRow
from schema.run_schema import LossConfig, RunConfig, format_rate
from utils.checkpoint_io import load_checkpoint, save_checkpoint
from utils.config_loader import write_run_config
from utils.errors import ConfigError, NumericError, SplitError
from utils.tensor_core import make_rng

logger = logging.getLogger(__name__)

CURVES_NAME = "curves.csv"
TIMINGS_NAME = "timings.csv"
FINAL_NAME = "final.akhw"
BEST_NAME = "best.akhw"
CURVE_COLUMNS = ["epoch", "lr", "train_loss", "train_accuracy", "val_loss", "val_accuracy"]
_DROPOUT_STREAM = 1


# --- CSV OUTPUT ---

def write_curves(rows: List[CurveRow], out_dir: Path) -> Tuple[Path, Path]:
    """curves.csv holds only seed-determined values; wall time goes to timings.csv."""
    curves = pd.DataFrame(
        [(r.epoch, format_rate(r.lr), r.train_loss, r.train_accuracy, r.val_loss, r.val_accuracy)
         for r in rows],
        columns=CURVE_COLUMNS,
    )
    timings = pd.DataFrame([(r.epoch, r.wall_seconds) for r in rows], columns=["epoch", "wall_seconds"])
    curves_path, timings_path = out_dir / CURVES_NAME, out_dir / TIMINGS_NAME
    curves.to_csv(curves_path, index=False, float_format="%.8f", lineterminator="\n")
    timings.to_csv(timings_path, index=False, float_format="%.3f", lineterminator="\n")
    return curves_path, timings_path


def read_curves(out_dir: Path, up_to_epoch: int) -> List[CurveRow]:
    """Rows 1..up_to_epoch of an earlier run in the same directory (for --resume)."""
    curves_path = out_dir / CURVES_NAME
    if not curves_path.is_file():
        return []
    df = pd.read_csv(curves_path)
    seconds = {}
    timings_path = out_dir / TIMINGS_NAME
    if timings_path.is_file():
        t = pd.read_csv(timings_path)
        seconds = dict(zip(t["epoch"].astype(int), t["wall_seconds"].astype(float)))
    rows = []
    for rec in df.to_dict(orient="records"):
        epoch = int(rec["epoch"])
        if epoch > up_to_epoch:
            continue
        rows.append(CurveRow(epoch=epoch, lr=float(rec["lr"]), train_loss=float(rec["train_loss"]),
                             train_accuracy=float(rec["train_accuracy"]), val_loss=float(rec["val_loss"]),
                             val_accuracy=float(rec["val_accuracy"]), wall_seconds=seconds.get(epoch, 0.0)))
    if [r.epoch for r in rows] != list(range(1, up_to_epoch + 1)):
        logger.warning(f"{curves_path} does not cover epochs 1..{up_to_epoch}; earlier rows dropped.")
        return []
    return rows


def phase_summary(cfg: RunConfig, rows: List[CurveRow]) -> pd.DataFrame:
    """One line per schedule phase: epochs, rate, final validation accuracy and loss."""
    by_epoch = {r.epoch: r for r in rows}
    out, start = [], 1
    for count, rate in cfg.lr_schedule.phases:
        end = start + count - 1
        last = by_epoch.get(end)
        out.append({
            "epochs": f"{start}-{end}" if count > 1 else str(start),
            "lr": format_rate(rate),
            "val_accuracy": last.val_accuracy if last else float("nan"),
            "val_loss": last.val_loss if last else float("nan"),
        })
        start = end + 1
    return pd.DataFrame(out)


# --- TRAINING ---

def train_epoch(graph: ModelGraph, store: ParamStore, state: AdamState, index: DatasetIndex,
                cfg: RunConfig, loss_cfg: LossConfig, epoch: int, lr: float,
                progress: bool = True) -> Tuple[float, float]:
    """One pass over the train split. Returns sample-weighted mean CCE and running accuracy."""
    shuffle_seed = [cfg.seed, epoch]
    dropout_rng = make_rng([cfg.seed, epoch, _DROPOUT_STREAM])
    n_train = len(index.select("train"))
    n_batches = math.ceil(n_train / cfg.batch_size)

    loss_sum, correct, seen = 0.0, 0, 0
    stream = batches(index, "train", cfg.batch_size, epoch_seed=shuffle_seed,
                     prefetch_depth=cfg.prefetch_depth, workers=cfg.workers, size=graph.spec.input_size)
    for batch in tqdm(stream, total=n_batches, desc=f"epoch {epoch}", leave=False, disable=not progress):
        n = batch.labels.shape[0]
        if n < 2:
            logger.warning(f"Skipping a batch of {n} sample(s); batch norm needs at least 2.")
            continue
        logits, cache = forward(graph, store, batch.images, mode="train", rng=dropout_rng)
        report, grads = backward(graph, store, cache, batch.labels, loss_cfg)
        if not math.isfinite(report.total):
            raise NumericError(f"Loss diverged at epoch {epoch}: {report.total}.")
        adam_step(store.params, grads, state, lr)
        store.mark_updated()

        loss_sum += report.data_loss * n
        correct += int(np.sum(logits.argmax(axis=1) == batch.labels))
        seen += n
    if seen == 0:
        raise SplitError("The train split produced no usable batches.")
    return loss_sum / seen, correct / seen


def run_train(cfg: RunConfig, resume: Optional[Path] = None, progress: bool = True) -> List[CurveRow]:
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_run_config(cfg, out_dir)

    index = prepare_index(cfg)
    if not cfg.index_path:
        write_index(index, out_dir / INDEX_NAME)

    start_epoch, rows = 1, []
    if resume:
        ckpt = load_checkpoint(resume)
        graph, store, state = restore_checkpoint(ckpt, resume)
        if ckpt.class_names != list(index.class_names):
            raise ConfigError(f"Checkpoint {resume} was trained on different classes.")
        start_epoch = ckpt.epoch + 1
        rows = read_curves(out_dir, ckpt.epoch)
        print(f"--- Resuming from {resume} after epoch {ckpt.epoch} ---")
    else:
        spec = cfg.architecture().model_copy(update={"n_classes": index.n_classes})
        graph, store = build_akhcrnet(cfg.seed, spec)
        state = AdamState()

    summary = pd.DataFrame(graph.summary(store), columns=["layer", "kind", "output", "params"])
    print(summary.to_string(index=False))
    print(f"Total parameters: {store.parameter_count()}")

    loss_cfg = cfg.loss_config(graph.spec)
    best_acc = max((r.val_accuracy for r in rows), default=-1.0)
    total = cfg.epochs
    if start_epoch > total:
        logger.warning(f"Checkpoint epoch {start_epoch - 1} already covers the {total}-epoch schedule.")

    for epoch in range(start_epoch, total + 1):
        lr = lr_for_epoch(cfg.lr_schedule, epoch)
        print(f"--- Training epoch {epoch}/{total} (lr {format_rate(lr)}) ---")
        t0 = time.perf_counter()
        train_loss, train_acc = train_epoch(graph, store, state, index, cfg, loss_cfg, epoch, lr, progress)
        val = evaluate_split(graph, store, index, "val", cfg.batch_size, cfg.prefetch_depth, cfg.workers)
        row = CurveRow(epoch=epoch, lr=lr, train_loss=train_loss, train_accuracy=train_acc,
                       val_loss=val.loss, val_accuracy=val.accuracy,
                       wall_seconds=time.perf_counter() - t0)
        rows.append(row)
        print(f"epoch {epoch}: train loss {train_loss:.4f} acc {train_acc:.4f} | "
              f"val loss {val.loss:.4f} acc {val.accuracy:.4f} ({row.wall_seconds:.1f}s)")

        ckpt = make_checkpoint(graph, store, state, epoch, index.class_names)
        save_checkpoint(out_dir / FINAL_NAME, ckpt)
        # ties keep the earliest epoch
        if val.accuracy > best_acc:
            best_acc = val.accuracy
            save_checkpoint(out_dir / BEST_NAME, ckpt)
        write_curves(rows, out_dir)

    if rows:
        print("--- Phase summary ---")
        print(phase_summary(cfg, rows).to_string(index=False, float_format=lambda v: f"{v:.4f}"))
    return rows
