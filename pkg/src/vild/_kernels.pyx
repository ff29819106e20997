# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled box kernels.

Decision-identical to ``vild._kernels_py``: same IoU arithmetic, same
tie handling, same outputs.
"""

from libc.math cimport INFINITY

import numpy as np


cdef inline double _fmax(double a, double b) nogil:
    return a if a > b else b


cdef inline double _fmin(double a, double b) nogil:
    return a if a < b else b


def iou_matrix(boxes_a, boxes_b):
    """Pairwise IoU of two (N, 4) / (M, 4) box arrays in x1,y1,x2,y2 order."""
    a_arr = np.ascontiguousarray(boxes_a, dtype=np.float64)
    b_arr = np.ascontiguousarray(boxes_b, dtype=np.float64)
    if a_arr.ndim != 2 or a_arr.shape[1] != 4:
        raise ValueError(f"expected an (N, 4) box array, got shape {a_arr.shape}")
    if b_arr.ndim != 2 or b_arr.shape[1] != 4:
        raise ValueError(f"expected an (N, 4) box array, got shape {b_arr.shape}")
    cdef Py_ssize_t na = a_arr.shape[0], nb = b_arr.shape[0]
    out_arr = np.zeros((na, nb), dtype=np.float64)
    if na == 0 or nb == 0:
        return out_arr
    cdef double[:, ::1] a = a_arr
    cdef double[:, ::1] b = b_arr
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    cdef double area_a, area_b, iw, ih, inter
    for i in range(na):
        area_a = (a[i, 2] - a[i, 0]) * (a[i, 3] - a[i, 1])
        for j in range(nb):
            area_b = (b[j, 2] - b[j, 0]) * (b[j, 3] - b[j, 1])
            iw = _fmin(a[i, 2], b[j, 2]) - _fmax(a[i, 0], b[j, 0])
            ih = _fmin(a[i, 3], b[j, 3]) - _fmax(a[i, 1], b[j, 1])
            inter = _fmax(iw, 0.0) * _fmax(ih, 0.0)
            out[i, j] = inter / (area_a + area_b - inter)
    return out_arr


def nms_keep(boxes, double iou_threshold):
    """Greedy suppression over boxes already sorted in processing order.

    Returns the kept indices in ascending order. A box is kept iff its
    IoU with every previously kept box is strictly below the threshold.
    """
    b_arr = np.ascontiguousarray(boxes, dtype=np.float64)
    if b_arr.ndim != 2 or b_arr.shape[1] != 4:
        raise ValueError(f"expected an (N, 4) box array, got shape {b_arr.shape}")
    cdef Py_ssize_t n = b_arr.shape[0]
    if n == 0:
        return np.empty(0, dtype=np.int64)
    cdef double[:, ::1] b = b_arr
    areas_arr = np.empty(n, dtype=np.float64)
    kept_arr = np.empty(n, dtype=np.int64)
    cdef double[::1] areas = areas_arr
    cdef long long[::1] kept = kept_arr
    cdef Py_ssize_t i, j, n_kept = 0
    cdef long long k
    cdef double iw, ih, inter, iou
    cdef bint suppressed
    for i in range(n):
        areas[i] = (b[i, 2] - b[i, 0]) * (b[i, 3] - b[i, 1])
    for i in range(n):
        suppressed = False
        for j in range(n_kept):
            k = kept[j]
            iw = _fmin(b[i, 2], b[k, 2]) - _fmax(b[i, 0], b[k, 0])
            ih = _fmin(b[i, 3], b[k, 3]) - _fmax(b[i, 1], b[k, 1])
            inter = _fmax(iw, 0.0) * _fmax(ih, 0.0)
            iou = inter / (areas[i] + areas[k] - inter)
            if iou >= iou_threshold:
                suppressed = True
                break
        if not suppressed:
            kept[n_kept] = i
            n_kept += 1
    return kept_arr[:n_kept].copy()


def greedy_match(ious, double iou_threshold):
    """Greedy one-to-one matching over an (n_det, n_gt) IoU matrix.

    Rows must already be in processing (score-descending) order. Each
    row matches the unused column with the highest IoU at or above the
    threshold; equal IoUs resolve to the lowest column index. Returns a
    length-n_det int64 array of column indices, -1 for unmatched.
    """
    m_arr = np.ascontiguousarray(ious, dtype=np.float64)
    if m_arr.ndim != 2:
        raise ValueError(f"expected a 2-d IoU matrix, got shape {m_arr.shape}")
    cdef Py_ssize_t n_det = m_arr.shape[0], n_gt = m_arr.shape[1]
    out_arr = np.full(n_det, -1, dtype=np.int64)
    if n_gt == 0:
        return out_arr
    cdef double[:, ::1] m = m_arr
    cdef long long[::1] out = out_arr
    used_arr = np.zeros(n_gt, dtype=np.int64)
    cdef long long[::1] used = used_arr
    cdef Py_ssize_t d, g, best_g
    cdef double v, best_v
    for d in range(n_det):
        best_g = 0
        best_v = -INFINITY
        for g in range(n_gt):
            v = -INFINITY if used[g] else m[d, g]
            if v > best_v:
                best_v = v
                best_g = g
        if best_v >= iou_threshold:
            out[d] = best_g
            used[best_g] = 1
    return out_arr
