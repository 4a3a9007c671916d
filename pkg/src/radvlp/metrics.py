"""Grounding and classification metrics.

Grounding metrics compare a similarity map against the cell mask rasterized
from ground-truth boxes: contrast-to-noise ratio between box interior and
exterior, IoU averaged over the fixed threshold grid, and Dice at 0.6 after
the fixed [-1,1] -> [0,1] affine rescale. Classification metrics pick the
operating threshold that maximizes F1 and report AUROC via the midrank
statistic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

MIOU_THRESHOLDS = (0.1, 0.2, 0.3, 0.4, 0.5)
DICE_THRESHOLD = 0.6
CNR_EPS = 1e-12


@dataclass
class CellMask:
    cells: np.ndarray  # (h, w) bool; True inside the box union

    @property
    def interior(self):
        return self.cells

    @property
    def exterior(self):
        return ~self.cells


@dataclass
class GroundingScore:
    cnr: float
    miou: float
    dice: float
    per_threshold_iou: dict[float, float]


def rasterize_boxes(boxes, image_size, grid_shape) -> CellMask:
    """Mark grid cells whose center pixel falls inside the union of boxes.

    ``image_size`` is (height, width) in pixels; ``grid_shape`` is (h, w)
    cells; boxes are (x, y, w, h) with origin top-left.
    """
    if not boxes:
        raise ValueError("no boxes to rasterize")
    ih, iw = image_size
    gh, gw = grid_shape
    cy = (np.arange(gh) + 0.5) * (ih / gh)
    cx = (np.arange(gw) + 0.5) * (iw / gw)
    cells = np.zeros((gh, gw), dtype=bool)
    for (x, y, w, h) in boxes:
        inside_y = (cy >= y) & (cy < y + h)
        inside_x = (cx >= x) & (cx < x + w)
        cells |= inside_y[:, None] & inside_x[None, :]
    return CellMask(cells=cells)


def cnr(sim_map, mask: CellMask) -> float:
    """|mean_in - mean_out| / sqrt(var_in + var_out), population variances."""
    values = np.asarray(sim_map, dtype=np.float64)
    inside = values[mask.interior]
    outside = values[mask.exterior]
    if inside.size == 0 or outside.size == 0:
        raise ValueError("both box interior and exterior must be non-empty")
    num = abs(inside.mean() - outside.mean())
    denom = np.sqrt(inside.var() + outside.var() + CNR_EPS)
    return float(num / denom)


def miou(sim_map, mask: CellMask):
    """IoU of {cells > tau} vs the box interior, averaged over the threshold grid."""
    values = np.asarray(sim_map, dtype=np.float64)
    target = mask.interior
    per: dict[float, float] = {}
    for tau in MIOU_THRESHOLDS:
        pred = values > tau
        union = int(np.logical_or(pred, target).sum())
        inter = int(np.logical_and(pred, target).sum())
        per[tau] = inter / union if union > 0 else 0.0
    return float(np.mean(list(per.values()))), per


def dice(sim_map, mask: CellMask) -> float:
    """Dice of {(s+1)/2 > 0.6} vs the box interior; 0 when both sets are empty."""
    values = (np.asarray(sim_map, dtype=np.float64) + 1.0) / 2.0
    pred = values > DICE_THRESHOLD
    target = mask.interior
    total = int(pred.sum()) + int(target.sum())
    if total == 0:
        return 0.0
    return float(2.0 * np.logical_and(pred, target).sum() / total)


def grounding_score(sim_map, mask: CellMask) -> GroundingScore:
    m, per = miou(sim_map, mask)
    return GroundingScore(cnr=cnr(sim_map, mask), miou=m, dice=dice(sim_map, mask),
                          per_threshold_iou=per)


def minmax_rescale(sim_map) -> np.ndarray:
    """Affinely map (min, max) to (-1, 1). Constant maps are an error."""
    values = np.asarray(sim_map, dtype=np.float64)
    lo, hi = float(values.min()), float(values.max())
    if hi <= lo:
        raise ValueError("min-max rescale undefined for a constant map")
    return 2.0 * (values - lo) / (hi - lo) - 1.0


def auroc(scores, labels) -> float:
    """Rank-statistic AUROC with midranks for ties."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUROC needs both classes present")
    ranks = rankdata(scores, method="average")
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def _f1(tp, fp, fn):
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom > 0 else 0.0


def classification_metrics(scores, labels) -> dict[str, float]:
    """Accuracy/F1/sensitivity/specificity at the F1-maximizing threshold, plus AUROC.

    Candidate thresholds are the observed score values; a sample is
    predicted positive when its score >= threshold.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be matching 1-D arrays")
    if labels.all() or not labels.any():
        raise ValueError("both classes must be present")

    area = auroc(scores, labels)
    best = None
    for thr in np.unique(scores):
        pred = scores >= thr
        tp = int(np.logical_and(pred, labels).sum())
        fp = int(np.logical_and(pred, ~labels).sum())
        fn = int(np.logical_and(~pred, labels).sum())
        f1 = _f1(tp, fp, fn)
        if best is None or f1 > best[0]:
            best = (f1, float(thr))
    f1, thr = best
    pred = scores >= thr
    tp = int(np.logical_and(pred, labels).sum())
    tn = int(np.logical_and(~pred, ~labels).sum())
    fp = int(np.logical_and(pred, ~labels).sum())
    fn = int(np.logical_and(~pred, labels).sum())
    return {
        "acc": (tp + tn) / labels.size,
        "f1": f1,
        "auroc": area,
        "sens": tp / (tp + fn),
        "spec": tn / (tn + fp),
        "threshold": thr,
    }
