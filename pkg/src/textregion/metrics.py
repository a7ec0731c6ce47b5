"""Evaluation: mIoU over confusion matrices, referring-expression
accuracy, and grounding gIoU/cIoU.

Accumulators merge associatively and commutatively, so sharded
evaluation reduces to exact single-shard results.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from .mask_ops import box_iou


class LabelRangeError(ValueError):
    """A label map contained a value neither < C nor the ignore index."""


class EmptyEvaluationError(ValueError):
    """No class was present in either prediction or ground truth."""


@dataclass
class ConfusionMatrix:
    """Pixel confusion counts; rows are ground truth, columns prediction.

    ``ignored`` counts pixels whose ground truth carried the ignore
    index.  ``unpredicted`` counts scored pixels whose prediction was
    the ignore index (no covering region); they enter the per-class
    union as false negatives without being false positives anywhere.
    """

    counts: np.ndarray  # (C, C) int64
    ignored: int = 0
    unpredicted: np.ndarray = None  # (C,) int64

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.ndim != 2 or self.counts.shape[0] != self.counts.shape[1]:
            raise ValueError(f"counts must be square, got {self.counts.shape}")
        if self.unpredicted is None:
            self.unpredicted = np.zeros(self.counts.shape[0], dtype=np.int64)
        self.unpredicted = np.asarray(self.unpredicted, dtype=np.int64)

    @classmethod
    def zeros(cls, num_classes: int) -> "ConfusionMatrix":
        return cls(counts=np.zeros((num_classes, num_classes), dtype=np.int64))

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    def total(self) -> int:
        return int(self.counts.sum()) + int(self.unpredicted.sum()) + self.ignored

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.num_classes != self.num_classes:
            raise ValueError("cannot merge confusion matrices of different class counts")
        return ConfusionMatrix(
            counts=self.counts + other.counts,
            ignored=self.ignored + other.ignored,
            unpredicted=self.unpredicted + other.unpredicted,
        )


def accumulate_confusion(cm: ConfusionMatrix, pred: np.ndarray, gt: np.ndarray,
                         ignore_index: int = 255) -> ConfusionMatrix:
    """Add one prediction/ground-truth pair of label maps to ``cm``.

    Pixels whose ground truth equals ``ignore_index`` are tallied in
    ``ignored``; every other pixel increments ``counts[gt, pred]`` (or
    ``unpredicted[gt]`` when the prediction is the ignore index).
    """
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction shape {pred.shape} != ground truth shape {gt.shape}")
    num_classes = cm.num_classes
    for name, arr in (("prediction", pred), ("ground truth", gt)):
        bad = (arr != ignore_index) & ((arr < 0) | (arr >= num_classes))
        if bad.any():
            value = int(arr[bad].flat[0])
            raise LabelRangeError(
                f"{name} contains label {value} outside [0, {num_classes}) "
                f"and != ignore index {ignore_index}"
            )
    scored = gt != ignore_index
    cm.ignored += int(np.count_nonzero(~scored))
    covered = scored & (pred != ignore_index)
    flat = num_classes * gt[covered].astype(np.int64) + pred[covered].astype(np.int64)
    cm.counts += np.bincount(flat, minlength=num_classes * num_classes).reshape(
        num_classes, num_classes
    )
    uncovered = scored & (pred == ignore_index)
    if uncovered.any():
        cm.unpredicted += np.bincount(
            gt[uncovered].astype(np.int64), minlength=num_classes
        )
    return cm


def miou(cm: ConfusionMatrix):
    """Per-class IoU (None for absent classes) and their mean.

    ``iou_c = tp / (gt_c + pred_c - tp)``; classes appearing in neither
    map are excluded from the mean.
    """
    diag = np.diag(cm.counts).astype(np.float64)
    gt_total = cm.counts.sum(axis=1) + cm.unpredicted
    pred_total = cm.counts.sum(axis=0)
    union = gt_total + pred_total - np.diag(cm.counts)
    per_class = []
    present = []
    for c in range(cm.num_classes):
        if union[c] == 0:
            per_class.append(None)
        else:
            iou = diag[c] / union[c]
            per_class.append(iou)
            present.append(iou)
    if not present:
        raise EmptyEvaluationError("no class present in prediction or ground truth")
    return per_class, float(np.mean(present))


def rec_accuracy(pairs) -> float:
    """Fraction of (predicted, ground-truth) box pairs with IoU >= 0.5."""
    pairs = list(pairs)
    if not pairs:
        raise ValueError("rec_accuracy needs at least one box pair")
    hits = sum(1 for pred, gt in pairs if box_iou(pred, gt) >= 0.5)
    return hits / len(pairs)


@dataclass
class GroundingTally:
    """Accumulates grounding IoUs; mergeable across shards."""

    per_image_ious: list = field(default_factory=list)
    cum_intersection: int = 0
    cum_union: int = 0

    def add(self, pred, gt, ignore=None, bin_threshold: float = 0.5):
        """Score one image; pixels inside ``ignore`` count for neither
        intersection nor union."""
        if pred.values.shape != gt.values.shape:
            raise ValueError(
                f"prediction shape {pred.values.shape} != ground truth {gt.values.shape}"
            )
        keep = np.ones(pred.values.shape, dtype=bool)
        if ignore is not None:
            if ignore.values.shape != pred.values.shape:
                raise ValueError(
                    f"ignore mask shape {ignore.values.shape} != {pred.values.shape}"
                )
            keep = ~(ignore.values >= bin_threshold)
        p = (pred.values >= bin_threshold) & keep
        g = (gt.values >= bin_threshold) & keep
        inter = int(np.count_nonzero(p & g))
        union = int(np.count_nonzero(p | g))
        self.per_image_ious.append(1.0 if union == 0 else inter / union)
        self.cum_intersection += inter
        self.cum_union += union

    def merge(self, other: "GroundingTally") -> "GroundingTally":
        return GroundingTally(
            per_image_ious=self.per_image_ious + other.per_image_ious,
            cum_intersection=self.cum_intersection + other.cum_intersection,
            cum_union=self.cum_union + other.cum_union,
        )

    @property
    def giou(self) -> float:
        if not self.per_image_ious:
            raise ValueError("no grounding items scored")
        return float(np.mean(self.per_image_ious))

    @property
    def ciou(self) -> float:
        if not self.per_image_ious:
            raise ValueError("no grounding items scored")
        if self.cum_union == 0:
            return 1.0
        return self.cum_intersection / self.cum_union


def grounding_scores(items):
    """gIoU (mean of per-image IoUs) and cIoU (cumulative ratio) over
    ``(pred, gt)`` or ``(pred, gt, ignore)`` soft-mask items."""
    tally = GroundingTally()
    for item in items:
        if len(item) == 2:
            pred, gt = item
            ignore = None
        else:
            pred, gt, ignore = item
        tally.add(pred, gt, ignore)
    return tally.giou, tally.ciou


def write_metrics_csv(path, rows):
    """Write ``(metric, class/name, value)`` rows with the standard header."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "class/name", "value"])
        for metric, name, value in rows:
            writer.writerow([metric, name, "" if value is None else repr(float(value))])


def summarize(rows) -> str:
    """Human-readable one-line-per-metric summary."""
    lines = []
    for metric, name, value in rows:
        label = f"{metric}[{name}]" if name else metric
        shown = "absent" if value is None else f"{float(value):.6f}"
        lines.append(f"{label:>24}: {shown}")
    return "\n".join(lines) + "\n"
