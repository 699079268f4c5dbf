"""Confusion matrices, per-class reports and crop roll-ups."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _accel
from .errors import LengthMismatch, ManifestError, UnknownClass
from .labels import LabelRegistry


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """C×C counts, rows are true classes and columns predicted classes."""

    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise ValueError(f"confusion matrix must be square, got {counts.shape}")
        if counts.min(initial=0) < 0:
            raise ValueError("confusion counts must be nonnegative")
        object.__setattr__(self, "counts", counts)

    @property
    def n_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __eq__(self, other):
        return isinstance(other, ConfusionMatrix) and np.array_equal(self.counts, other.counts)


def confusion(truth: Sequence[int], pred: Sequence[int], n_classes: int) -> ConfusionMatrix:
    truth = np.asarray(truth, dtype=np.int64).reshape(-1)
    pred = np.asarray(pred, dtype=np.int64).reshape(-1)
    if truth.shape != pred.shape:
        raise LengthMismatch(f"{len(truth)} truths vs {len(pred)} predictions")
    for name, arr in (("truth", truth), ("pred", pred)):
        if arr.size and (arr.min() < 0 or arr.max() >= n_classes):
            raise UnknownClass(f"{name} contains ids outside 0..{n_classes - 1}")
    return ConfusionMatrix(_accel.confusion_counts(truth, pred, n_classes))


@dataclass(frozen=True)
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass(frozen=True)
class MetricsReport:
    per_class: tuple[ClassMetrics, ...]
    macro_avg: tuple[float, float, float]
    weighted_avg: tuple[float, float, float]
    overall_accuracy: float
    confusion: ConfusionMatrix

    def to_dict(self, class_names: Sequence[str] | None = None) -> dict:
        names = list(class_names) if class_names is not None else [str(i) for i in range(len(self.per_class))]
        return {
            "classes": [
                {"name": n, "precision": m.precision, "recall": m.recall, "f1": m.f1, "support": m.support}
                for n, m in zip(names, self.per_class)
            ],
            "macro_avg": dict(zip(("precision", "recall", "f1"), self.macro_avg)),
            "weighted_avg": dict(zip(("precision", "recall", "f1"), self.weighted_avg)),
            "accuracy": self.overall_accuracy,
            "confusion": self.confusion.counts.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        per_class = tuple(ClassMetrics(c["precision"], c["recall"], c["f1"], int(c["support"])) for c in d["classes"])
        trio = lambda x: (x["precision"], x["recall"], x["f1"])  # noqa: E731
        return cls(per_class, trio(d["macro_avg"]), trio(d["weighted_avg"]), d["accuracy"], ConfusionMatrix(np.array(d["confusion"])))


def _ratio(num: int, den: int) -> Fraction:
    return Fraction(num, den) if den else Fraction(0)


def report(cm: ConfusionMatrix) -> MetricsReport:
    """Per-class precision/recall/F1 and aggregates.

    Zero denominators yield 0 (never-predicted class has precision 0, empty
    class has recall 0, F1 is 0 when precision + recall is 0). Macro F1 is
    the mean of per-class F1, not the F1 of macro precision and recall.

    Every per-class metric is a ratio of counts (F1 = 2·tp / (row + col)),
    so aggregates are formed exactly and rounded once; in particular the
    weighted recall is bit-identical to the accuracy.
    """
    counts = cm.counts
    tp = [int(x) for x in np.diag(counts)]
    col = [int(x) for x in counts.sum(axis=0)]
    row = [int(x) for x in counts.sum(axis=1)]
    total = sum(row)
    c = cm.n_classes

    prec = [_ratio(t, k) for t, k in zip(tp, col)]
    rec = [_ratio(t, r) for t, r in zip(tp, row)]
    f1 = [_ratio(2 * t, r + k) for t, r, k in zip(tp, row, col)]

    per_class = tuple(ClassMetrics(float(p), float(r), float(f), s) for p, r, f, s in zip(prec, rec, f1, row))
    macro = tuple(float(sum(m, Fraction(0)) / c) for m in (prec, rec, f1))
    if total:
        weighted = tuple(float(sum((s * x for s, x in zip(row, m)), Fraction(0)) / total) for m in (prec, rec, f1))
        acc = float(Fraction(sum(tp), total))
    else:
        weighted = (0.0, 0.0, 0.0)
        acc = 0.0
    return MetricsReport(per_class, macro, weighted, acc, cm)  # type: ignore[arg-type]


def accuracy(truth: Sequence[int], pred: Sequence[int]) -> float:
    truth = np.asarray(truth)
    pred = np.asarray(pred)
    if truth.shape != pred.shape:
        raise LengthMismatch(f"{len(truth)} truths vs {len(pred)} predictions")
    return float((truth == pred).sum()) / len(truth) if len(truth) else 0.0


# --------------------------------------------------------------- crops


@dataclass(frozen=True)
class CropStats:
    crop: str
    num_classes: int
    num_test_images: int
    correct: int

    @property
    def accuracy(self) -> float | None:
        """None when the crop has no test images."""
        return self.correct / self.num_test_images if self.num_test_images else None


@dataclass(frozen=True)
class CropReport:
    crops: tuple[CropStats, ...]
    total_images: int
    total_correct: int

    @property
    def overall_accuracy(self) -> float:
        return self.total_correct / self.total_images if self.total_images else 0.0

    def get(self, crop: str) -> CropStats:
        for c in self.crops:
            if c.crop == crop:
                return c
        raise KeyError(crop)


def crop_report(cm: ConfusionMatrix, registry: LabelRegistry) -> CropReport:
    """Accuracy per crop; errors count against the true class's crop."""
    if len(registry) != cm.n_classes:
        raise UnknownClass(f"registry has {len(registry)} classes, confusion matrix {cm.n_classes}")
    rows = cm.counts.sum(axis=1)
    diag = np.diag(cm.counts)
    crops = []
    for crop in sorted(registry.crop_index):
        ids = list(registry.crop_index[crop])
        crops.append(CropStats(crop, len(ids), int(rows[ids].sum()), int(diag[ids].sum())))
    return CropReport(tuple(crops), int(rows.sum()), int(diag.sum()))


# ---------------------------------------------------------------- files


def write_report_csv(rep: MetricsReport, class_names: Sequence[str], path: str | Path) -> Path:
    """Per-class table at 3 decimals, followed by macro and weighted rows."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["class", "precision", "recall", "f1", "support"])
        for name, m in zip(class_names, rep.per_class):
            w.writerow([name, f"{m.precision:.3f}", f"{m.recall:.3f}", f"{m.f1:.3f}", m.support])
        w.writerow(["macro avg", *(f"{x:.3f}" for x in rep.macro_avg), ""])
        w.writerow(["weighted avg", *(f"{x:.3f}" for x in rep.weighted_avg), ""])
        w.writerow(["accuracy", "", "", f"{rep.overall_accuracy:.3f}", rep.confusion.total])
    return path


def read_report_csv(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_report_json(rep: MetricsReport, class_names: Sequence[str], path: str | Path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(rep.to_dict(class_names), indent=2) + "\n")
    return path


def read_report_json(path: str | Path) -> tuple[MetricsReport, list[str]]:
    d = json.loads(Path(path).read_text())
    return MetricsReport.from_dict(d), [c["name"] for c in d["classes"]]


def write_confusion_csv(cm: ConfusionMatrix, class_names: Sequence[str], path: str | Path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["true\\pred", *class_names])
        for name, row in zip(class_names, cm.counts):
            w.writerow([name, *row.tolist()])
    return path


def read_confusion_csv(path: str | Path) -> tuple[ConfusionMatrix, list[str]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    names = rows[0][1:]
    if [r[0] for r in rows[1:]] != names:
        raise ManifestError(f"{path}: row and column class names differ")
    return ConfusionMatrix(np.array([[int(x) for x in r[1:]] for r in rows[1:]], dtype=np.int64).reshape(len(names), len(names))), names


def write_crop_csv(crops: CropReport, path: str | Path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["crop", "classes", "test_images", "correct", "accuracy_pct"])
        for c in crops.crops:
            w.writerow([c.crop, c.num_classes, c.num_test_images, c.correct, "" if c.accuracy is None else f"{100 * c.accuracy:.2f}"])
        w.writerow(["Overall", sum(c.num_classes for c in crops.crops), crops.total_images, crops.total_correct, f"{100 * crops.overall_accuracy:.2f}"])
    return path


def read_crop_csv(path: str | Path) -> CropReport:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    crops = tuple(CropStats(r["crop"], int(r["classes"]), int(r["test_images"]), int(r["correct"])) for r in rows if r["crop"] != "Overall")
    overall = [r for r in rows if r["crop"] == "Overall"][0]
    return CropReport(crops, int(overall["test_images"]), int(overall["correct"]))
