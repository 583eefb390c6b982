"""Confusion-matrix accumulation and per-class IoU / mIoU reporting.

The mean is taken only over an explicit evaluated-class set, so datasets
that lack some canonical classes are averaged over the classes they
actually contain; missing classes render as "-" in the text table.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .labelmap import SemanticMap
from .taxonomy import ClassTaxonomy, URBAN_SHORT_NAMES


@dataclass
class ConfusionMatrix:
    """K x K count grid (ground-truth row, prediction column).

    Void ground-truth pixels are excluded outright. Void predictions on
    non-void ground truth land in a separate overflow column: they count
    as false negatives for the ground-truth class, never as false
    positives for anything.
    """

    counts: np.ndarray
    void_pred: np.ndarray

    @classmethod
    def zeros(cls, num_classes: int) -> "ConfusionMatrix":
        return cls(
            np.zeros((num_classes, num_classes), dtype=np.int64),
            np.zeros(num_classes, dtype=np.int64),
        )

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum() + self.void_pred.sum())

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if self.num_classes != other.num_classes:
            raise ValueError("cannot merge confusion matrices of different sizes")
        return ConfusionMatrix(self.counts + other.counts, self.void_pred + other.void_pred)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ConfusionMatrix):
            return NotImplemented
        return np.array_equal(self.counts, other.counts) and np.array_equal(
            self.void_pred, other.void_pred
        )


def accumulate(
    cm: ConfusionMatrix, prediction: SemanticMap, ground_truth: SemanticMap
) -> ConfusionMatrix:
    """Add one (prediction, ground-truth) map pair into the matrix in place."""
    if prediction.grid.shape != ground_truth.grid.shape:
        raise ValueError(
            f"dimension mismatch: prediction {prediction.grid.shape}"
            f" vs ground truth {ground_truth.grid.shape}"
        )
    k = cm.num_classes
    gt = ground_truth.grid.ravel().astype(np.int64)
    pred = prediction.grid.ravel().astype(np.int64)
    keep = gt != ground_truth.void_id
    gt = gt[keep]
    pred = pred[keep]
    if (gt >= k).any():
        raise ValueError("ground truth contains class ids outside the matrix")
    pred_void = pred == prediction.void_id
    if ((pred >= k) & ~pred_void).any():
        raise ValueError("prediction contains class ids outside the matrix")
    cm.void_pred += np.bincount(gt[pred_void], minlength=k)
    pair = gt[~pred_void] * k + pred[~pred_void]
    cm.counts += np.bincount(pair, minlength=k * k).reshape(k, k)
    return cm


@dataclass(frozen=True)
class IouReport:
    """Per-class IoU (None outside the evaluated set) and their mean.

    Exact rationals internally; evaluated classes that never occur still
    contribute an IoU of 0 to the mean.
    """

    per_class: dict[int, Fraction | None]
    miou: Fraction
    evaluated: frozenset[int]

    def iou_float(self, class_id: int) -> float | None:
        value = self.per_class[class_id]
        return None if value is None else float(value)

    @property
    def miou_float(self) -> float:
        return float(self.miou)


def iou_report(cm: ConfusionMatrix, evaluated: frozenset[int] | set[int]) -> IouReport:
    """Per-class IoU from the matrix, averaged over the evaluated set only."""
    evaluated = frozenset(evaluated)
    if not evaluated:
        raise ValueError("evaluated class set must not be empty")
    bad = [c for c in evaluated if not 0 <= c < cm.num_classes]
    if bad:
        raise ValueError(f"evaluated ids outside matrix: {sorted(bad)}")
    row = cm.counts.sum(axis=1) + cm.void_pred
    col = cm.counts.sum(axis=0)
    per_class: dict[int, Fraction | None] = {}
    total = Fraction(0)
    for c in range(cm.num_classes):
        if c not in evaluated:
            per_class[c] = None
            continue
        tp = int(cm.counts[c, c])
        denom = int(row[c]) + int(col[c]) - tp  # tp + fp + fn
        value = Fraction(0) if denom == 0 else Fraction(tp, denom)
        per_class[c] = value
        total += value
    return IouReport(per_class, total / len(evaluated), evaluated)


def render_table(report: IouReport, taxonomy: ClassTaxonomy) -> str:
    """Aligned plain-text table: mIoU first, then one column per class.

    Values are percentages with one decimal; classes outside the
    evaluated set show "-".
    """
    if len(taxonomy) == len(URBAN_SHORT_NAMES):
        names = URBAN_SHORT_NAMES
    else:
        names = tuple(c.name[:5] for c in taxonomy.classes)
    header = ["mIoU"] + list(names)
    values = [f"{100 * report.miou_float:.1f}"]
    for c in taxonomy.class_ids:
        iou = report.per_class.get(c)
        values.append("-" if iou is None else f"{100 * float(iou):.1f}")
    widths = [max(len(h), len(v)) for h, v in zip(header, values)]
    head = "  ".join(h.rjust(w) for h, w in zip(header, widths))
    body = "  ".join(v.rjust(w) for v, w in zip(values, widths))
    return head + "\n" + body
