"""Dense-prediction metrics and the label-set reward."""

from __future__ import annotations

import json
import math
from typing import Iterable, Optional, Tuple

import numpy as np

from .errors import NoValidPixels


class ConfusionMatrix:
    """counts[gt, pred] pixel tallies; pixels whose gt is ignore are skipped."""

    def __init__(self, n_classes: int):
        if n_classes < 1:
            raise ValueError("n_classes must be >= 1")
        self.n_classes = n_classes
        self.counts = np.zeros((n_classes, n_classes), dtype=np.int64)
        # gt pixels predicted as something outside the class range (e.g. background)
        self.missed = np.zeros(n_classes, dtype=np.int64)

    def update(self, gt, pred, ignore_value: int = 255) -> "ConfusionMatrix":
        gt = np.asarray(gt).ravel()
        pred = np.asarray(pred).ravel()
        if gt.shape != pred.shape:
            raise ValueError(f"gt and pred sizes differ: {gt.size} vs {pred.size}")
        n = self.n_classes
        keep = gt != ignore_value
        g, p = gt[keep], pred[keep]
        if np.any((g < 0) | (g >= n)):
            raise ValueError("gt label outside 0..n_classes-1")
        # a prediction outside the class range (e.g. decoded background) counts as a miss
        p = np.where((p >= 0) & (p < n), p, -1)
        miss = p < 0
        self.counts += np.bincount(g[~miss] * n + p[~miss], minlength=n * n).reshape(n, n)
        self.missed += np.bincount(g[miss], minlength=n)
        return self

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.n_classes != self.n_classes:
            raise ValueError("class counts differ")
        out = ConfusionMatrix(self.n_classes)
        out.counts = self.counts + other.counts
        out.missed = self.missed + other.missed
        return out

    @property
    def total(self) -> int:
        return int(self.counts.sum() + self.missed.sum())

    def per_class_iou(self) -> np.ndarray:
        """IoU per class; NaN where the class is absent from both gt and pred."""
        tp = np.diag(self.counts).astype(np.float64)
        fp = self.counts.sum(axis=0) - np.diag(self.counts)
        fn = self.counts.sum(axis=1) - np.diag(self.counts) + self.missed
        union = tp + fp + fn
        iou = np.full(self.n_classes, np.nan)
        np.divide(tp, union, out=iou, where=union > 0)
        return iou


def miou(cm: ConfusionMatrix) -> float:
    if cm.total == 0:
        raise NoValidPixels("confusion matrix is empty")
    ious = cm.per_class_iou()
    ious = ious[~np.isnan(ious)]
    # correctly rounded sum: the result does not depend on class order
    return math.fsum(ious.tolist()) / len(ious)


def binary_counts(pred_mask, gt_mask) -> Tuple[int, int]:
    """(intersection, union) pixel counts of two boolean masks."""
    p = np.asarray(pred_mask, dtype=bool)
    g = np.asarray(gt_mask, dtype=bool)
    return int(np.sum(p & g)), int(np.sum(p | g))


def ciou(intersections: Iterable[int], unions: Iterable[int]) -> float:
    """Cumulative IoU: total intersection over total union across the split."""
    i = int(np.sum(np.asarray(list(intersections), dtype=np.int64)))
    u = int(np.sum(np.asarray(list(unions), dtype=np.int64)))
    if u == 0:
        raise NoValidPixels("union is empty over the whole split")
    return i / u


def delta_threshold(pred_m, gt_m, valid=None, thresh: float = 1.25) -> float:
    """Fraction of valid pixels with max(pred/gt, gt/pred) < thresh."""
    if thresh <= 1:
        raise ValueError("thresh must be > 1")
    pred = np.asarray(pred_m, dtype=np.float64)
    gt = np.asarray(gt_m, dtype=np.float64)
    ok = (gt > 0) & (pred > 0) & np.isfinite(gt) & np.isfinite(pred)
    if valid is not None:
        ok &= np.asarray(valid, dtype=bool)
    if not ok.any():
        raise NoValidPixels("no valid depth pixels")
    p, g = pred[ok], gt[ok]
    ratio = np.maximum(p / g, g / p)
    return float(np.mean(ratio < thresh))


def crop_validity(height: int, width: int, left: float = 0.0, bottom: float = 0.0) -> np.ndarray:
    """Mask that drops the leftmost ``left`` and bottom ``bottom`` fraction of the image."""
    valid = np.ones((height, width), dtype=bool)
    valid[:, : int(round(left * width))] = False
    nb = int(round(bottom * height))
    if nb:
        valid[height - nb :, :] = False
    return valid


def label_set_iou(pred_refs: Iterable[str], gt_refs: Iterable[str]) -> float:
    a, b = set(pred_refs), set(gt_refs)
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


def metric_report(
    cm: Optional[ConfusionMatrix] = None,
    ciou_value: Optional[float] = None,
    delta1: Optional[float] = None,
    label_iou: Optional[float] = None,
) -> str:
    out = {
        "miou": miou(cm) if cm is not None else None,
        "per_class_iou": [None if np.isnan(v) else float(v) for v in cm.per_class_iou()] if cm is not None else None,
        "ciou": ciou_value,
        "delta1": delta1,
        "label_set_iou": label_iou,
    }
    return json.dumps(out, indent=2)
