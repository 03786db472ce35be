"""Segmentation quality measures: confusion matrix, mIoU, mAcc.

Pixels whose ground-truth label is the unlabeled sentinel are excluded from
the confusion matrix entirely, and classes absent from the ground truth are
excluded from both means.
"""
from __future__ import annotations

import numpy as np

from .core import ArtifactError, LabelMap


def confusion(pred: LabelMap, gt: LabelMap) -> np.ndarray:
    """K x K counts: entry [i, j] is the number of pixels with gt=i, pred=j."""
    if pred.labels.shape != gt.labels.shape or pred.num_classes != gt.num_classes:
        raise ArtifactError("shape_mismatch", "prediction and ground truth must share dims and K")
    k = gt.num_classes
    g = gt.labels.reshape(-1)
    p = pred.labels.reshape(-1)
    keep = g < k
    g = g[keep].astype(np.int64)
    p = p[keep].astype(np.int64)
    if p.size and p.max() >= k:
        raise ArtifactError("label_out_of_range", "prediction contains ids >= K on labeled pixels")
    counts = np.bincount(g * k + p, minlength=k * k)
    return counts.reshape(k, k)


def per_class_iou(conf: np.ndarray) -> np.ndarray:
    """IoU per class; NaN for classes absent from the ground truth."""
    conf = np.asarray(conf, dtype=np.float64)
    diag = np.diag(conf)
    rows = conf.sum(axis=1)
    cols = conf.sum(axis=0)
    union = rows + cols - diag
    iou = np.full(conf.shape[0], np.nan)
    present = rows > 0
    # a present class with an empty union cannot occur (rows > 0 implies union > 0)
    iou[present] = diag[present] / union[present]
    return iou


def miou(conf: np.ndarray) -> float:
    """Mean IoU over classes present in the ground truth (row sum > 0)."""
    iou = per_class_iou(conf)
    present = ~np.isnan(iou)
    if not present.any():
        raise ArtifactError("no_classes_present", "ground truth contains no labeled pixels")
    return float(iou[present].mean())


def macc(conf: np.ndarray) -> float:
    """Mean per-class pixel accuracy over classes present in the ground truth."""
    conf = np.asarray(conf, dtype=np.float64)
    diag = np.diag(conf)
    rows = conf.sum(axis=1)
    present = rows > 0
    if not present.any():
        raise ArtifactError("no_classes_present", "ground truth contains no labeled pixels")
    return float((diag[present] / rows[present]).mean())
