"""Evaluation metrics: point-set MSE for morphology, confusion-based IoU /
precision / recall / F1 for masks, and PSNR for images."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PSNR_CAP = 99.0


def mse_points(pred, gt) -> float:
    """Mean over points of the squared Euclidean distance."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.ndim != 2 or gt.ndim != 2:
        raise ValueError("point sets must be (N, dim) arrays")
    if pred.shape != gt.shape:
        raise ValueError(f"point sets differ in shape: {pred.shape} vs {gt.shape}")
    if len(pred) == 0:
        raise ValueError("point sets must be non-empty")
    if not (np.all(np.isfinite(pred)) and np.all(np.isfinite(gt))):
        raise ValueError("point coordinates must be finite")
    return float(np.mean(np.sum((pred - gt) ** 2, axis=1)))


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def confusion(pred, gt) -> ConfusionCounts:
    pred = np.asarray(pred).astype(bool)
    gt = np.asarray(gt).astype(bool)
    if pred.shape != gt.shape:
        raise ValueError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    tp = int(np.count_nonzero(pred & gt))
    fp = int(np.count_nonzero(pred & ~gt))
    fn = int(np.count_nonzero(~pred & gt))
    return ConfusionCounts(tp, fp, fn, pred.size - tp - fp - fn)


def iou(counts: ConfusionCounts) -> float:
    """tp / (tp + fp + fn); two empty masks count as a perfect match (1.0)."""
    union = counts.tp + counts.fp + counts.fn
    if union == 0:
        return 1.0
    return counts.tp / union


@dataclass(frozen=True)
class PRF:
    precision: float
    recall: float
    f1: float
    degenerate: bool = False

    def __iter__(self):
        return iter((self.precision, self.recall, self.f1))


def precision_recall_f1(counts: ConfusionCounts) -> PRF:
    """Precision, recall and their harmonic mean.

    Any ratio with a zero denominator is reported as 0 and ``degenerate`` is
    set. F1 is computed from the counts as 2tp / (2tp + fp + fn), which is the
    harmonic mean whenever precision and recall are both defined.
    """
    tp, fp, fn = counts.tp, counts.fp, counts.fn
    degenerate = (tp + fp == 0) or (tp + fn == 0)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * tp / (2 * tp + fp + fn) if tp else 0.0
    return PRF(precision, recall, f1, degenerate)


def f1_from_iou(value: float) -> float:
    return 2.0 * value / (1.0 + value)


def mask_scores(pred, gt) -> dict:
    c = confusion(pred, gt)
    prf = precision_recall_f1(c)
    return {"iou": iou(c), "precision": prf.precision, "recall": prf.recall, "f1": prf.f1}


def psnr(a, b) -> float:
    """PSNR in dB for peak 1.0, capped at 99 dB for identical inputs."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / mse))
