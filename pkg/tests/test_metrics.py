import numpy as np
import pandas as pd
import pytest

from evaluation.metrics import (BANGLALEKHA_GROUPS, ConfusionMatrix, confusion, emit_report_csv, group_summary,
                                merge_confusion, precision_recall_f1)
from utils.errors import RangeError, ShapeError
from utils.tensor_core import make_rng


def test_hand_tally():
    cm = confusion([0, 0, 1, 2], [0, 1, 1, 2], n_classes=3)
    np.testing.assert_array_equal(cm.counts, [[1, 1, 0], [0, 1, 0], [0, 0, 1]])
    report = precision_recall_f1(cm)
    assert [c.precision for c in report.classes] == pytest.approx([1.0, 0.5, 1.0])
    assert [c.recall for c in report.classes] == pytest.approx([0.5, 1.0, 1.0])
    assert [c.f1 for c in report.classes] == pytest.approx([2 / 3, 2 / 3, 1.0])
    assert [c.support for c in report.classes] == [2, 1, 1]
    assert report.macro_precision == pytest.approx(5 / 6)
    assert report.macro_recall == pytest.approx(5 / 6)
    assert report.macro_f1 == pytest.approx(7 / 9)
    assert report.accuracy == pytest.approx(0.75)
    assert not report.degenerate_classes


def test_perfect_predictions():
    labels = np.repeat(np.arange(5), 3)
    report = precision_recall_f1(confusion(labels, labels, n_classes=5))
    assert all(c.precision == c.recall == c.f1 == 1.0 for c in report.classes)
    assert report.macro_f1 == report.accuracy == 1.0


def test_empty_input():
    cm = confusion([], [], n_classes=3)
    assert cm.total == 0 and not cm.counts.any()
    report = precision_recall_f1(cm)
    assert report.accuracy == 0.0 and report.macro_f1 == 0.0
    assert len(report.degenerate_classes) == 3


@pytest.mark.parametrize("true, pred", [([0, 3], [0, 1]), ([0, 1], [-1, 1])])
def test_label_out_of_range(true, pred):
    with pytest.raises(RangeError):
        confusion(true, pred, n_classes=3)


def test_length_mismatch():
    with pytest.raises(ShapeError):
        confusion([0, 1], [0], n_classes=3)


def test_degenerate_classes_flagged_and_skipped_in_macro(caplog):
    report = precision_recall_f1(confusion([0, 0], [0, 0], n_classes=3))
    assert report.degenerate_classes == ["1", "2"]
    assert report.macro_precision == report.macro_recall == 1.0
    assert "zero precision/recall denominator" in caplog.text

    # never predicted but present: stays in the macro average as 0
    report = precision_recall_f1(confusion([0, 1], [0, 0], n_classes=2))
    assert report.degenerate_classes == ["1"]
    assert report.macro_precision == pytest.approx(0.25)
    assert report.macro_recall == pytest.approx(0.5)


def test_matches_brute_force_counting():
    rng = make_rng(42)
    true = rng.integers(0, 84, 10_000)
    pred = np.where(rng.random(10_000) < 0.6, true, rng.integers(0, 84, 10_000))
    report = precision_recall_f1(confusion(true, pred))
    for c in (0, 17, 50, 83):
        tp = int(np.sum((true == c) & (pred == c)))
        assert report.classes[c].precision == pytest.approx(tp / np.sum(pred == c))
        assert report.classes[c].recall == pytest.approx(tp / np.sum(true == c))
        assert report.classes[c].support == int(np.sum(true == c))
    assert report.accuracy == pytest.approx(np.mean(true == pred))
    assert report.micro_precision == report.micro_recall == pytest.approx(report.accuracy)


def test_sample_order_does_not_matter():
    rng = make_rng(7)
    true, pred = rng.integers(0, 10, 500), rng.integers(0, 10, 500)
    perm = rng.permutation(500)
    a = confusion(true, pred, n_classes=10)
    b = confusion(true[perm], pred[perm], n_classes=10)
    np.testing.assert_array_equal(a.counts, b.counts)


def test_merge_shards():
    rng = make_rng(3)
    true, pred = rng.integers(0, 6, 300), rng.integers(0, 6, 300)
    whole = confusion(true, pred, n_classes=6)
    merged = merge_confusion(confusion(true[s], pred[s], n_classes=6)
                             for s in (slice(0, 100), slice(100, 250), slice(250, 300)))
    np.testing.assert_array_equal(merged.counts, whole.counts)
    assert merged.total == 300
    with pytest.raises(ShapeError):
        merge_confusion([whole, confusion([0], [0], n_classes=2)])


def test_matrix_validation():
    with pytest.raises(ValueError):
        ConfusionMatrix(counts=np.ones((2, 3), dtype=np.int64), total=6)
    with pytest.raises(ValueError):
        ConfusionMatrix(counts=np.ones((2, 2), dtype=np.int64), total=5)


class TestCsv:
    def _emit(self, tmp_path, tag):
        names = ["ka", "kha", "ga"]
        cm = confusion([0, 0, 1, 2], [0, 1, 1, 2], n_classes=3)
        report = precision_recall_f1(cm, names)
        return report, emit_report_csv(report, cm, tmp_path / tag / "report.csv", tmp_path / tag / "confusion.csv")

    def test_layout(self, tmp_path):
        report, (report_path, confusion_path) = self._emit(tmp_path, "a")
        df = pd.read_csv(report_path)
        assert list(df.columns) == ["class", "precision", "recall", "f1", "support"]
        assert df["class"].tolist() == ["ka", "kha", "ga", "macro_avg", "accuracy"]
        macro = df[df["class"] == "macro_avg"].iloc[0]
        assert macro["precision"] == pytest.approx(round(report.macro_precision, 4))
        assert macro["f1"] == pytest.approx(round(report.macro_f1, 4))
        assert macro["support"] == 4
        assert report_path.read_text(encoding="utf-8").splitlines()[1] == "ka,1.0000,0.5000,0.6667,2"

        lines = confusion_path.read_text(encoding="utf-8").splitlines()
        assert lines[0] == "true\\pred,ka,kha,ga"
        assert lines[1] == "ka,1,1,0"

    def test_byte_stable(self, tmp_path):
        _, a = self._emit(tmp_path, "a")
        _, b = self._emit(tmp_path, "b")
        assert a[0].read_bytes() == b[0].read_bytes()
        assert a[1].read_bytes() == b[1].read_bytes()
        assert b"\r\n" not in a[0].read_bytes()


def test_group_summary():
    names = [str(i) for i in range(1, 85)]
    true = np.arange(84)
    # numerals (51..60, ids 50..59) always predicted as class 0
    pred = np.where((true >= 50) & (true < 60), 0, true)
    summary = group_summary(confusion(true, pred), names)
    assert summary == {"basic": 1.0, "numerals": 0.0, "conjuncts": 1.0}
    assert set(summary) == set(BANGLALEKHA_GROUPS)
    assert group_summary(confusion([0], [0], n_classes=2), ["a", "b"]) is None
