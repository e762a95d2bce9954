"""Segmentation metrics: confusion matrix, mIoU, and boundary-band F-score.

Functions that can have nothing to measure (no labelled pixels, empty
boundary band) return ``None`` rather than a number.
"""

import numpy as np
from scipy.ndimage import binary_dilation


def _check_labels(labels, n_classes, name):
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise ValueError(f"{name} must be a 2-D label map, got shape {labels.shape}")
    if not np.issubdtype(labels.dtype, np.integer):
        raise ValueError(f"{name} must hold integer class indices")
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError(f"{name} has class indices outside [0, {n_classes})")
    return labels


def confusion_matrix(pred, gt, n_classes, mask=None):
    """Counts ``cm[g, p]`` of pixels with ground truth ``g`` predicted as ``p``."""
    pred = _check_labels(pred, n_classes, "pred")
    gt = _check_labels(gt, n_classes, "gt")
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != gt.shape:
            raise ValueError(f"mask shape {mask.shape} does not match {gt.shape}")
        pred, gt = pred[mask], gt[mask]
    idx = gt.ravel() * n_classes + pred.ravel()
    return np.bincount(idx, minlength=n_classes * n_classes).reshape(n_classes, n_classes)


def miou(cm):
    """Mean IoU over classes present in prediction or ground truth; ``None`` if none are."""
    cm = np.asarray(cm)
    tp = np.diag(cm)
    union = cm.sum(axis=0) + cm.sum(axis=1) - tp
    present = union > 0
    if not present.any():
        return None
    return float(np.mean(tp[present] / union[present]))


def boundary_seeds(gt):
    """Pixels with at least one 4-neighbor of a different class."""
    gt = np.asarray(gt)
    seeds = np.zeros(gt.shape, dtype=bool)
    dv = gt[1:, :] != gt[:-1, :]
    dh = gt[:, 1:] != gt[:, :-1]
    seeds[1:, :] |= dv
    seeds[:-1, :] |= dv
    seeds[:, 1:] |= dh
    seeds[:, :-1] |= dh
    return seeds


def boundary_mask(gt, width_px):
    """Band of Chebyshev radius ``(width_px - 1) // 2`` around the label-change seeds."""
    if width_px < 1 or width_px % 2 == 0:
        raise ValueError("band width must be a positive odd pixel count")
    seeds = boundary_seeds(gt)
    radius = (width_px - 1) // 2
    if radius == 0 or not seeds.any():
        return seeds
    return binary_dilation(seeds, structure=np.ones((3, 3), dtype=bool), iterations=radius)


def band_fscore(pred, gt, band):
    """Macro F1 over ground-truth classes present in ``band``; ``None`` on an empty band."""
    pred = np.asarray(pred)[band]
    gt = np.asarray(gt)[band]
    if gt.size == 0:
        return None
    scores = []
    for c in np.unique(gt):
        tp = np.count_nonzero((pred == c) & (gt == c))
        n_pred = np.count_nonzero(pred == c)
        n_gt = np.count_nonzero(gt == c)
        precision = tp / n_pred if n_pred else 0.0
        recall = tp / n_gt
        total = precision + recall
        scores.append(2.0 * precision * recall / total if total > 0 else 0.0)
    return float(np.mean(scores))


def boundary_fscore(pred, gt, width_px):
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")
    return band_fscore(pred, gt, boundary_mask(gt, width_px))


def evaluate_pair(pred, gt, n_classes):
    """``{"miou", "f1px", "f3px"}`` for one prediction."""
    cm = confusion_matrix(pred, gt, n_classes)
    return {
        "miou": miou(cm),
        "f1px": boundary_fscore(pred, gt, 1),
        "f3px": boundary_fscore(pred, gt, 3),
    }


def mean_defined(values):
    """Mean of the non-``None`` entries, or ``None`` if there are none."""
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else None
