"""Evaluation metrics and report records in the Acc(%) / F1 / Acc(%) / MAE / r layout."""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .inference import Prediction, Task, binarize_label, decide, map_to_five_class

COLUMNS = ("Acc(%)", "F1", "Acc(%)", "MAE", "r")
METRIC_FIELDS = ("binary_acc", "f1", "five_class_acc", "mae", "pearson_r")


@dataclass
class MetricRow:
    """One row of a results table.  ``None`` marks a column the task does not
    produce, or a correlation that is undefined because a series is constant."""

    binary_acc: float | None = None
    f1: float | None = None
    five_class_acc: float | None = None
    mae: float | None = None
    pearson_r: float | None = None
    r_undefined: bool = False

    def merged(self, other: "MetricRow") -> "MetricRow":
        """Fill this row's missing columns from ``other``."""
        values = {f: getattr(self, f) if getattr(self, f) is not None else getattr(other, f)
                  for f in METRIC_FIELDS}
        return MetricRow(**values, r_undefined=self.r_undefined or other.r_undefined)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def confusion_counts(pred: np.ndarray, truth: np.ndarray) -> tuple[int, int, int, int]:
    """(TP, FP, FN, TN) for boolean positive-class arrays."""
    pred = np.asarray(pred, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    tp = int(np.sum(pred & truth))
    fp = int(np.sum(pred & ~truth))
    fn = int(np.sum(~pred & truth))
    tn = int(np.sum(~pred & ~truth))
    return tp, fp, fn, tn


def accuracy(pred, truth) -> float:
    pred, truth = np.asarray(pred), np.asarray(truth)
    return float(np.mean(pred == truth))


def f1_positive(pred, truth) -> float:
    """F1 of the positive class; 0 when there are no predicted or true positives."""
    tp, fp, fn, _ = confusion_counts(pred, truth)
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


def mean_absolute_error(pred, truth) -> float:
    return float(np.mean(np.abs(np.asarray(pred, dtype=float) - np.asarray(truth, dtype=float))))


def pearson_r(x, y) -> float | None:
    """Pearson correlation, or ``None`` when either series has zero variance."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) != len(y) or len(x) < 2:
        raise ValueError("pearson_r needs two equal-length series of length >= 2")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        return None
    return float(np.clip((dx @ dy) / math.sqrt(sxx * syy), -1.0, 1.0))


def metrics(pred: Prediction, labels) -> MetricRow:
    """Metrics for one task's predictions against raw [-3, 3] labels.

    Regression scores fill every column (binary via the sign rule, five-class
    via the rounding map); binary predictions fill Acc and F1; five-class
    predictions fill the five-class accuracy.
    """
    labels = np.asarray(labels, dtype=float)
    if len(labels) < 2:
        raise ValueError("metrics need at least two predictions")
    if len(np.asarray(pred.value)) != len(labels):
        raise ValueError("predictions and labels differ in length")
    truth_pos = np.array([binarize_label(y) for y in labels], dtype=bool)
    truth_cls = np.array([map_to_five_class(y) for y in labels])
    task = Task(pred.task)
    if task is Task.BINARY:
        decided = decide(pred)
        return MetricRow(binary_acc=accuracy(decided, truth_pos), f1=f1_positive(decided, truth_pos))
    if task is Task.FIVE_CLASS:
        return MetricRow(five_class_acc=accuracy(decide(pred), truth_cls))
    scores = np.asarray(pred.value, dtype=float)
    pos = scores >= 0.0
    cls = np.array([map_to_five_class(float(np.clip(s, -3.0, 3.0))) for s in scores])
    r = pearson_r(scores, labels)
    return MetricRow(
        binary_acc=accuracy(pos, truth_pos),
        f1=f1_positive(pos, truth_pos),
        five_class_acc=accuracy(cls, truth_cls),
        mae=mean_absolute_error(scores, labels),
        pearson_r=r,
        r_undefined=r is None,
    )


def mean_row(rows: list[MetricRow]) -> MetricRow:
    """Column-wise mean over the rows that define the column."""
    out = {}
    for f in METRIC_FIELDS:
        vals = [getattr(r, f) for r in rows if getattr(r, f) is not None]
        out[f] = float(np.mean(vals)) if vals else None
    return MetricRow(**out, r_undefined=any(r.r_undefined for r in rows))


def _cell(value: float | None, kind: str) -> str:
    if value is None:
        return "-"
    if kind == "pct":
        return f"{100.0 * value:.1f}"
    return f"{value:.3f}"


def format_cells(row: MetricRow) -> list[str]:
    return [_cell(row.binary_acc, "pct"), _cell(row.f1, "pct"), _cell(row.five_class_acc, "pct"),
            _cell(row.mae, "num"), _cell(row.pearson_r, "num")]


def format_table(rows: list[tuple[str, MetricRow]], title: str | None = None) -> str:
    """Fixed-width table with the Binary / 5-class / Regression column groups."""
    name_w = max([len(n) for n, _ in rows] + [8])
    lines = []
    if title:
        lines.append(title)
    lines.append(" " * name_w + "  " + f"{'Binary':^16}{'5-class':^9}{'Regression':^16}")
    lines.append(f"{'':<{name_w}}  " + "".join(f"{c:>8}" for c in COLUMNS))
    for name, row in rows:
        lines.append(f"{name:<{name_w}}  " + "".join(f"{c:>8}" for c in format_cells(row)))
    return "\n".join(lines)


@dataclass
class ExperimentReport:
    variant: str
    task: str
    folds: list[MetricRow]
    config: dict = field(default_factory=dict)
    fold_speakers: list[list[str]] = field(default_factory=list)

    @property
    def mean(self) -> MetricRow:
        return mean_row(self.folds)

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "task": self.task,
            "columns": list(COLUMNS),
            "folds": [r.to_dict() for r in self.folds],
            "mean": self.mean.to_dict(),
            "fold_speakers": self.fold_speakers,
            "config": self.config,
        }

    def format(self) -> str:
        rows = [(f"fold {i}", r) for i, r in enumerate(self.folds)] + [("mean", self.mean)]
        return format_table(rows, title=f"{self.variant} ({self.task})")


@dataclass
class AblationReport:
    rows: list[tuple[str, ExperimentReport]]

    def to_dict(self) -> dict:
        return {"columns": list(COLUMNS),
                "rows": [{"name": name, **rep.to_dict()} for name, rep in self.rows]}

    def format(self) -> str:
        return format_table([(name, rep.mean) for name, rep in self.rows])


def dumps(report) -> str:
    """Canonical JSON text for a report (sorted keys, so reruns compare byte-for-byte)."""
    return json.dumps(report.to_dict(), sort_keys=True)
