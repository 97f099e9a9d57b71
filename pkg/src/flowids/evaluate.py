"""Classification metrics and the model comparison table."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from typing import Mapping, Sequence

import numpy as np

from .errors import LabelOutOfRange, LengthMismatch, MissingProposed


@dataclass(frozen=True, eq=False)
class Metrics:
    confusion: np.ndarray  # rows = true class, cols = predicted class
    accuracy: float
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    support: np.ndarray

    @property
    def n_samples(self) -> int:
        return int(self.confusion.sum())

    def macro_f1(self, present_only: bool = True) -> float:
        mask = self.support > 0 if present_only else np.ones_like(self.support, bool)
        return float(self.f1[mask].mean()) if mask.any() else 0.0


def _safe_div(num, den):
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    out = np.zeros_like(num)
    np.divide(num, den, out=out, where=den > 0)
    return out


def compute_metrics(true_labels, predicted_labels, n_classes: int) -> Metrics:
    """Confusion matrix plus per-class precision/recall/F1 (0/0 taken as 0)."""
    t = np.asarray(true_labels, dtype=np.int64)
    p = np.asarray(predicted_labels, dtype=np.int64)
    if t.shape != p.shape or t.ndim != 1:
        raise LengthMismatch(f"{t.shape} true labels vs {p.shape} predictions")
    if t.size == 0:
        raise LengthMismatch("no samples")
    for arr in (t, p):
        if arr.min() < 0 or arr.max() >= n_classes:
            raise LabelOutOfRange(f"label ids must lie in [0, {n_classes})")
    confusion = np.bincount(t * n_classes + p, minlength=n_classes * n_classes).reshape(n_classes, n_classes)
    tp = np.diag(confusion)
    support = confusion.sum(axis=1)
    precision = _safe_div(tp, confusion.sum(axis=0))
    recall = _safe_div(tp, support)
    f1 = _safe_div(2 * precision * recall, precision + recall)
    return Metrics(confusion, float(tp.sum() / t.size), precision, recall, f1, support)


def majority_baseline_accuracy(train_labels, test_labels) -> float:
    """Accuracy of always predicting the most frequent training class."""
    majority = np.bincount(np.asarray(train_labels)).argmax()
    return float(np.mean(np.asarray(test_labels) == majority))


@dataclass(frozen=True)
class ReportRow:
    model: str
    accuracy: float            # percent
    delta: Decimal | None      # proposed - this, percentage points, 2 decimals


@dataclass(frozen=True)
class ComparisonReport:
    rows: tuple[ReportRow, ...]
    proposed: str
    settings: tuple[tuple[str, str], ...] = ()

    def deltas(self) -> dict[str, float]:
        return {r.model: float(r.delta) for r in self.rows if r.delta is not None}


def _exact(x) -> Decimal:
    # repr gives the shortest string that round-trips, so 90.1 stays 90.1
    return x if isinstance(x, Decimal) else Decimal(repr(float(x)))


def comparison_table(results: Mapping[str, float], proposed: str,
                     settings: Sequence[tuple[str, str]] = ()) -> ComparisonReport:
    """Rows ascending by accuracy (name breaks ties), proposed model last.

    Each non-proposed row carries proposed_accuracy - accuracy, rounded half-up
    to two decimals.
    """
    if proposed not in results:
        raise MissingProposed(f"{proposed!r} not among {sorted(results)}")
    top = _exact(results[proposed])
    others = sorted((m for m in results if m != proposed), key=lambda m: (float(results[m]), m))
    rows = [ReportRow(m, float(results[m]),
                      (top - _exact(results[m])).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))
            for m in others]
    rows.append(ReportRow(proposed, float(results[proposed]), None))
    return ComparisonReport(tuple(rows), proposed, tuple(settings))


def format_report(report: ComparisonReport) -> str:
    """Aligned plain-text table in the layout of the published comparison."""
    header = ("Models", "Accuracy", "Increase in accuracy (%)")
    body = []
    for r in report.rows:
        name = f"{r.model} (proposed model)" if r.model == report.proposed else r.model
        body.append((name, f"{r.accuracy:.2f}%", "-" if r.delta is None else f"{r.delta:.2f}"))
    widths = [max(len(row[i]) for row in [header, *body]) for i in range(3)]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in [header, *body]]
    for key, value in report.settings:
        lines.append(f"# {key} = {value}")
    return "\n".join(lines) + "\n"


def report_csv(report: ComparisonReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model", "accuracy", "delta"])
    for r in report.rows:
        w.writerow([r.model, f"{r.accuracy:.2f}", "" if r.delta is None else f"{r.delta:.2f}"])
    return buf.getvalue()


def confusion_csv(metrics: Metrics, names: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["true\\predicted", *names])
    for name, row in zip(names, metrics.confusion):
        w.writerow([name, *map(int, row)])
    return buf.getvalue()


def format_metrics(metrics: Metrics, names: Sequence[str]) -> str:
    width = max([len(n) for n in names] + [5])
    lines = [f"accuracy {metrics.accuracy:.4f}", "",
             "per-class (supplementary)",
             f"{'class'.ljust(width)}  precision  recall  f1      support"]
    for i, name in enumerate(names):
        lines.append(f"{name.ljust(width)}  {metrics.precision[i]:9.4f}  {metrics.recall[i]:6.4f}"
                     f"  {metrics.f1[i]:6.4f}  {int(metrics.support[i])}")
    return "\n".join(lines) + "\n"


def parse_results(text: str) -> dict[str, float]:
    """Parse ``model=accuracy`` lines; blank lines and ``#`` comments are skipped.

    Raises ValueError naming the 1-based line number of a malformed line.
    """
    out: dict[str, float] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        name, sep, value = line.rpartition("=")
        try:
            if not sep or not name.strip():
                raise ValueError
            out[name.strip()] = float(value.strip().rstrip("%"))
        except ValueError:
            raise ValueError(f"line {lineno}: expected model=accuracy, got {raw!r}") from None
    return out
