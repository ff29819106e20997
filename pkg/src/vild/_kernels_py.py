"""Pure-numpy box kernels.

Mirrors ``vild._kernels`` decision for decision: identical IoU
arithmetic, identical tie handling, identical outputs.
"""

from __future__ import annotations

import numpy as np


def _as_boxes(arr) -> np.ndarray:
    out = np.ascontiguousarray(arr, dtype=np.float64)
    if out.ndim != 2 or out.shape[1] != 4:
        raise ValueError(f"expected an (N, 4) box array, got shape {out.shape}")
    return out


def iou_matrix(boxes_a, boxes_b) -> np.ndarray:
    """Pairwise IoU of two (N, 4) / (M, 4) box arrays in x1,y1,x2,y2 order."""
    a = _as_boxes(boxes_a)
    b = _as_boxes(boxes_b)
    if a.shape[0] == 0 or b.shape[0] == 0:
        return np.zeros((a.shape[0], b.shape[0]), dtype=np.float64)
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.maximum(iw, 0.0) * np.maximum(ih, 0.0)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    return inter / (area_a[:, None] + area_b[None, :] - inter)


def nms_keep(boxes, iou_threshold: float) -> np.ndarray:
    """Greedy suppression over boxes already sorted in processing order.

    Returns the kept indices in ascending order. A box is kept iff its
    IoU with every previously kept box is strictly below the threshold.
    """
    b = _as_boxes(boxes)
    n = b.shape[0]
    if n == 0:
        return np.empty(0, dtype=np.int64)
    areas = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    kept = np.empty(n, dtype=np.int64)
    n_kept = 0
    for i in range(n):
        if n_kept:
            k = kept[:n_kept]
            iw = np.minimum(b[i, 2], b[k, 2]) - np.maximum(b[i, 0], b[k, 0])
            ih = np.minimum(b[i, 3], b[k, 3]) - np.maximum(b[i, 1], b[k, 1])
            inter = np.maximum(iw, 0.0) * np.maximum(ih, 0.0)
            ious = inter / (areas[i] + areas[k] - inter)
            if np.any(ious >= iou_threshold):
                continue
        kept[n_kept] = i
        n_kept += 1
    return kept[:n_kept].copy()


def greedy_match(ious, iou_threshold: float) -> np.ndarray:
    """Greedy one-to-one matching over an (n_det, n_gt) IoU matrix.

    Rows must already be in processing (score-descending) order. Each
    row matches the unused column with the highest IoU at or above the
    threshold; equal IoUs resolve to the lowest column index. Returns a
    length-n_det int64 array of column indices, -1 for unmatched.
    """
    m = np.ascontiguousarray(ious, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"expected a 2-d IoU matrix, got shape {m.shape}")
    n_det, n_gt = m.shape
    out = np.full(n_det, -1, dtype=np.int64)
    if n_gt == 0:
        return out
    used = np.zeros(n_gt, dtype=bool)
    neg_inf = -np.inf
    for d in range(n_det):
        row = np.where(used, neg_inf, m[d])
        g = int(np.argmax(row))
        if row[g] >= iou_threshold:
            out[d] = g
            used[g] = True
    return out
