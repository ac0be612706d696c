"""Deterministic crack segmentation and the confusion-based metric suite.

The segmenter is an adaptive darkness threshold: a pixel is crack when it
sits more than ``tau`` below its local box mean, followed by a small
morphological closing and removal of tiny components.  Applying the same
deterministic rule to every method's output keeps the comparison fair and
needs no pretrained asset.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.ndimage as ndi
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeMismatchError


@dataclass
class SegmenterParams:
    window: int = 15
    tau: float = 0.15
    min_area: int = 20
    closing_radius: int = 1

    def __post_init__(self):
        if self.window < 3 or self.window % 2 == 0:
            raise ValueError("window must be odd and >= 3")
        if self.tau <= 0:
            raise ValueError("tau must be positive")


@dataclass
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self):
        return self.tp + self.tn + self.fp + self.fn


@dataclass
class MetricReport:
    accuracy: float
    precision: float
    recall: float
    f1: float


def _box_mean(img, window):
    """Exact local mean over the window clipped at the borders."""
    h, w = img.shape
    r = window // 2
    ii = np.zeros((h + 1, w + 1))
    ii[1:, 1:] = img.cumsum(axis=0).cumsum(axis=1)
    rows = np.arange(h)
    cols = np.arange(w)
    y0 = np.clip(rows - r, 0, h)[:, None]
    y1 = np.clip(rows + r + 1, 0, h)[:, None]
    x0 = np.clip(cols - r, 0, w)[None, :]
    x1 = np.clip(cols + r + 1, 0, w)[None, :]
    total = ii[y1, x1] - ii[y0, x1] - ii[y1, x0] + ii[y0, x0]
    count = (y1 - y0) * (x1 - x0)
    return total / count


def _dilate(mask, radius):
    pad = np.pad(mask, radius, constant_values=False)
    win = sliding_window_view(pad, (2 * radius + 1, 2 * radius + 1))
    return win.any(axis=(2, 3))


def _erode(mask, radius):
    pad = np.pad(mask, radius, constant_values=True)
    win = sliding_window_view(pad, (2 * radius + 1, 2 * radius + 1))
    return win.all(axis=(2, 3))


def segment(image, params=None):
    """Binary crack mask of a (H, W) or (C, H, W) image in [-1, 1]."""
    params = params or SegmenterParams()
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 3:
        img = img.mean(axis=0)
    mask = img < _box_mean(img, params.window) - params.tau
    if params.closing_radius > 0 and mask.any():
        mask = _erode(_dilate(mask, params.closing_radius), params.closing_radius)
    if params.min_area > 1 and mask.any():
        labels, n = ndi.label(mask, structure=np.ones((3, 3)))
        if n:
            areas = np.bincount(labels.ravel())
            keep = areas >= params.min_area
            keep[0] = False
            mask = keep[labels]
    return mask.astype(np.uint8)


def confusion(pred, truth):
    """Per-pixel confusion counts with crack as the positive class."""
    pred = np.asarray(pred).astype(bool)
    truth = np.asarray(truth).astype(bool)
    if pred.shape != truth.shape:
        raise ShapeMismatchError("confusion", truth.shape, pred.shape)
    tp = int(np.sum(pred & truth))
    tn = int(np.sum(~pred & ~truth))
    fp = int(np.sum(pred & ~truth))
    fn = int(np.sum(~pred & truth))
    return ConfusionCounts(tp=tp, tn=tn, fp=fp, fn=fn)


def metrics(counts):
    """Accuracy, precision, recall, F1 from confusion counts.

    Zero-denominator conventions: an all-empty prediction against an
    all-empty truth scores 1.0 on every ratio; otherwise an empty side
    scores 0 for the affected ratio and F1.
    """
    if counts.total <= 0:
        raise ValueError("confusion counts are empty")
    accuracy = (counts.tp + counts.tn) / counts.total
    pred_empty = counts.tp + counts.fp == 0
    truth_empty = counts.tp + counts.fn == 0
    if pred_empty and truth_empty:
        return MetricReport(accuracy=accuracy, precision=1.0, recall=1.0, f1=1.0)
    precision = 0.0 if pred_empty else counts.tp / (counts.tp + counts.fp)
    recall = 0.0 if truth_empty else counts.tp / (counts.tp + counts.fn)
    f1 = 0.0 if precision + recall == 0 else 2.0 * precision * recall / (precision + recall)
    return MetricReport(accuracy=accuracy, precision=precision, recall=recall, f1=f1)


def score(pred_mask, truth_mask):
    """Convenience: metrics(confusion(pred, truth))."""
    return metrics(confusion(pred_mask, truth_mask))
