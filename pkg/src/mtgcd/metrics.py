"""Foreground (changed-class) confusion counts and derived scores."""
from dataclasses import dataclass

import numpy as np

from .errors import MetricError


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __add__(self, other):
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn)

    @property
    def total(self):
        return self.tp + self.fp + self.fn + self.tn


def _as_numpy(x):
    if hasattr(x, "detach"):
        x = x.detach().cpu().numpy()
    return np.asarray(x)


def accumulate(pred_mask, gt_mask, ignore=None):
    pred, gt = _as_numpy(pred_mask).astype(bool), _as_numpy(gt_mask).astype(bool)
    if pred.shape != gt.shape:
        raise MetricError(f"shape mismatch: prediction {pred.shape} vs ground truth {gt.shape}")
    keep = np.ones_like(gt) if ignore is None else ~_as_numpy(ignore).astype(bool)
    if keep.shape != gt.shape:
        raise MetricError(f"shape mismatch: ignore {keep.shape} vs ground truth {gt.shape}")
    p, g = pred[keep], gt[keep]
    return ConfusionCounts(
        tp=int(np.count_nonzero(p & g)),
        fp=int(np.count_nonzero(p & ~g)),
        fn=int(np.count_nonzero(~p & g)),
        tn=int(np.count_nonzero(~p & ~g)),
    )


def _ratio(num, den):
    return (num / den, False) if den else (0.0, True)


def summarize(counts):
    """IoU, F1, recall and precision; any 0/0 is reported as 0 and sets ``degenerate``."""
    iou, d1 = _ratio(counts.tp, counts.tp + counts.fp + counts.fn)
    precision, d2 = _ratio(counts.tp, counts.tp + counts.fp)
    recall, d3 = _ratio(counts.tp, counts.tp + counts.fn)
    f1, d4 = _ratio(2 * precision * recall, precision + recall)
    return {"iou": iou, "f1": f1, "recall": recall, "precision": precision, "degenerate": d1 or d2 or d3 or d4}
