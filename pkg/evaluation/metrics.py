"""
Confusion matrix and per-class precision / recall / F1 with macro averages.

Rows of the matrix are true classes, columns predicted classes. A metric whose
denominator is zero is reported as 0 and the class is flagged degenerate.
Macro averages run over classes with support > 0.
"""
import logging
from pathlib import Path
from typing import Dict, Iterable, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator

from schema.record_schema import ClassMetrics, ClassReport
from utils.errors import DatasetIOError, RangeError, ShapeError

logger = logging.getLogger(__name__)

# BanglaLekha-Isolated directory-name ranges (inclusive)
BANGLALEKHA_GROUPS: Dict[str, Tuple[int, int]] = {
    "basic": (1, 50),
    "numerals": (51, 60),
    "conjuncts": (61, 84),
}


class ConfusionMatrix(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    counts: np.ndarray = Field(..., description="(n_classes, n_classes) int64, rows = true")
    total: int = Field(..., ge=0)

    @model_validator(mode="after")
    def _check_counts(self):
        if self.counts.ndim != 2 or self.counts.shape[0] != self.counts.shape[1]:
            raise ValueError(f"Confusion counts must be square, got {self.counts.shape}.")
        if np.any(self.counts < 0):
            raise ValueError("Confusion counts must be nonnegative.")
        if int(self.counts.sum()) != self.total:
            raise ValueError(f"Counts sum {int(self.counts.sum())} != total {self.total}.")
        return self

    @property
    def n_classes(self) -> int:
        return self.counts.shape[0]


def confusion(true: Sequence[int], pred: Sequence[int], n_classes: int = 84) -> ConfusionMatrix:
    t = np.asarray(true, dtype=np.int64).reshape(-1)
    p = np.asarray(pred, dtype=np.int64).reshape(-1)
    if t.shape != p.shape:
        raise ShapeError(f"true and pred lengths differ: {t.shape[0]} vs {p.shape[0]}.")
    for name, v in (("true", t), ("pred", p)):
        if v.size and (v.min() < 0 or v.max() >= n_classes):
            raise RangeError(f"{name} labels must lie in [0, {n_classes}), got [{v.min()}, {v.max()}].")
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (t, p), 1)
    return ConfusionMatrix(counts=counts, total=int(t.size))


def merge_confusion(parts: Iterable[ConfusionMatrix]) -> ConfusionMatrix:
    """Element-wise sum of shard matrices."""
    parts = list(parts)
    if not parts:
        raise ValueError("merge_confusion needs at least one matrix.")
    n = parts[0].n_classes
    if any(cm.n_classes != n for cm in parts):
        raise ShapeError("Cannot merge confusion matrices of different class counts.")
    counts = sum((cm.counts for cm in parts), np.zeros((n, n), dtype=np.int64))
    return ConfusionMatrix(counts=counts, total=sum(cm.total for cm in parts))


def _safe_ratio(num: np.ndarray, den: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    zero = den == 0
    out = np.divide(num, den, out=np.zeros(num.shape, dtype=np.float64), where=~zero)
    return out, zero


def precision_recall_f1(cm: ConfusionMatrix, class_names: Optional[Sequence[str]] = None) -> ClassReport:
    n = cm.n_classes
    names = list(class_names) if class_names is not None else [str(i) for i in range(n)]
    if len(names) != n:
        raise ShapeError(f"{len(names)} class names for a {n}-class matrix.")

    counts = cm.counts.astype(np.float64)
    tp = np.diag(counts)
    predicted = counts.sum(axis=0)
    support = counts.sum(axis=1)

    precision, p_zero = _safe_ratio(tp, predicted)
    recall, r_zero = _safe_ratio(tp, support)
    f1, f_zero = _safe_ratio(2.0 * precision * recall, precision + recall)
    degenerate = p_zero | r_zero

    classes = [
        ClassMetrics(class_id=i, class_name=names[i], precision=float(precision[i]),
                     recall=float(recall[i]), f1=float(f1[i]), support=int(support[i]),
                     degenerate=bool(degenerate[i]))
        for i in range(n)
    ]
    flagged = [names[i] for i in range(n) if degenerate[i]]
    if flagged:
        logger.warning(f"{len(flagged)} class(es) with a zero precision/recall denominator, "
                       f"reported as 0: {', '.join(flagged[:10])}{' ...' if len(flagged) > 10 else ''}")

    present = support > 0
    if present.any():
        macro = (float(precision[present].mean()), float(recall[present].mean()), float(f1[present].mean()))
    else:
        macro = (0.0, 0.0, 0.0)
    total = cm.total
    correct = float(tp.sum())
    accuracy = correct / total if total else 0.0
    # single-label: every sample is one prediction and one truth
    micro_p = correct / float(predicted.sum()) if predicted.sum() else 0.0
    micro_r = correct / float(support.sum()) if support.sum() else 0.0

    return ClassReport(classes=classes, macro_precision=macro[0], macro_recall=macro[1], macro_f1=macro[2],
                       micro_precision=micro_p, micro_recall=micro_r, accuracy=accuracy, total=total)


def report_frame(report: ClassReport) -> pd.DataFrame:
    rows = [(c.class_name, c.precision, c.recall, c.f1, c.support) for c in report.classes]
    rows.append(("macro_avg", report.macro_precision, report.macro_recall, report.macro_f1,
                 sum(c.support for c in report.classes if c.support > 0)))
    rows.append(("accuracy", report.accuracy, report.accuracy, report.accuracy, report.total))
    return pd.DataFrame(rows, columns=["class", "precision", "recall", "f1", "support"])


def confusion_frame(cm: ConfusionMatrix, class_names: Sequence[str]) -> pd.DataFrame:
    names = list(class_names)
    df = pd.DataFrame(cm.counts, index=names, columns=names)
    df.index.name = "true\\pred"
    return df


def emit_report_csv(report: ClassReport, cm: ConfusionMatrix, report_path: Union[str, Path],
                    confusion_path: Union[str, Path]) -> Tuple[Path, Path]:
    """Writes report.csv (4 decimals) and the integer confusion grid, UTF-8 with LF endings."""
    report_path, confusion_path = Path(report_path), Path(confusion_path)
    names = [c.class_name for c in report.classes]
    try:
        report_path.parent.mkdir(parents=True, exist_ok=True)
        confusion_path.parent.mkdir(parents=True, exist_ok=True)
        report_frame(report).to_csv(report_path, index=False, float_format="%.4f",
                                    lineterminator="\n", encoding="utf-8")
        confusion_frame(cm, names).to_csv(confusion_path, lineterminator="\n", encoding="utf-8")
    except OSError as e:
        raise DatasetIOError(f"Cannot write evaluation CSVs: {e}")
    return report_path, confusion_path


def group_summary(cm: ConfusionMatrix, class_names: Sequence[str],
                  groups: Dict[str, Tuple[int, int]] = BANGLALEKHA_GROUPS) -> Optional[Dict[str, float]]:
    """
    Accuracy per character group, keyed by numeric class directory name.
    Returns None when the class names are not all numeric.
    """
    try:
        numbers = [int(name) for name in class_names]
    except ValueError:
        return None
    summary: Dict[str, float] = {}
    for group, (lo, hi) in groups.items():
        members = [i for i, num in enumerate(numbers) if lo <= num <= hi]
        if not members:
            continue
        rows = cm.counts[members]
        seen = int(rows.sum())
        if seen == 0:
            continue
        summary[group] = float(cm.counts[members, members].sum()) / seen
    return summary
