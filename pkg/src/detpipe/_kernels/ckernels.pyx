# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled suppression and matching kernels.

Bit-for-bit mirror of ``pykernels``; that module pins the contract (pick
order, tie-breaking, cluster accumulation order). Keep the two in sync.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


cdef inline double _pair_iou(const double[:, ::1] b, const double[::1] areas,
                             Py_ssize_t i, Py_ssize_t j) noexcept nogil:
    cdef double iw = (b[i, 2] if b[i, 2] < b[j, 2] else b[j, 2]) \
        - (b[i, 0] if b[i, 0] > b[j, 0] else b[j, 0])
    cdef double ih = (b[i, 3] if b[i, 3] < b[j, 3] else b[j, 3]) \
        - (b[i, 1] if b[i, 1] > b[j, 1] else b[j, 1])
    if iw < 0.0:
        iw = 0.0
    if ih < 0.0:
        ih = 0.0
    cdef double inter = iw * ih
    cdef double union_ = areas[i] + areas[j] - inter
    if union_ > 0.0:
        return inter / union_
    return 0.0


cdef inline double _cross_iou(const double[:, ::1] a, const double[::1] a_areas,
                              const double[:, ::1] g, const double[::1] g_areas,
                              Py_ssize_t i, Py_ssize_t j) noexcept nogil:
    cdef double iw = (a[i, 2] if a[i, 2] < g[j, 2] else g[j, 2]) \
        - (a[i, 0] if a[i, 0] > g[j, 0] else g[j, 0])
    cdef double ih = (a[i, 3] if a[i, 3] < g[j, 3] else g[j, 3]) \
        - (a[i, 1] if a[i, 1] > g[j, 1] else g[j, 1])
    if iw < 0.0:
        iw = 0.0
    if ih < 0.0:
        ih = 0.0
    cdef double inter = iw * ih
    cdef double union_ = a_areas[i] + g_areas[j] - inter
    if union_ > 0.0:
        return inter / union_
    return 0.0


def _sorted_views(boxes, scores):
    boxes = np.ascontiguousarray(boxes, dtype=np.float64).reshape(-1, 4)
    scores = np.ascontiguousarray(scores, dtype=np.float64).reshape(-1)
    if boxes.shape[0] != scores.shape[0]:
        raise ValueError("boxes and scores must have equal length")
    order = np.argsort(-scores, kind="stable").astype(np.int64)
    ob = np.ascontiguousarray(boxes[order])
    areas = np.ascontiguousarray((ob[:, 2] - ob[:, 0]) * (ob[:, 3] - ob[:, 1]))
    return order, ob, np.ascontiguousarray(scores[order]), areas


def nms_kernel(boxes, scores, double iou_threshold):
    """See ``pykernels.nms_kernel``."""
    order, ob, oscores, areas_arr = _sorted_views(boxes, scores)
    cdef Py_ssize_t n = order.shape[0]
    if n == 0:
        return np.zeros(0, dtype=np.int64)

    keep_arr = np.empty(n, dtype=np.int64)
    alive_arr = np.ones(n, dtype=np.uint8)

    cdef const cnp.int64_t[::1] order_v = order
    cdef const double[:, ::1] b = ob
    cdef const double[::1] areas = areas_arr
    cdef cnp.int64_t[::1] keep = keep_arr
    cdef cnp.uint8_t[::1] alive = alive_arr
    cdef Py_ssize_t k, j, nk = 0
    cdef double iou

    with nogil:
        for k in range(n):
            if not alive[k]:
                continue
            keep[nk] = order_v[k]
            nk += 1
            for j in range(k + 1, n):
                if alive[j]:
                    iou = _pair_iou(b, areas, k, j)
                    if iou > iou_threshold:
                        alive[j] = 0
    return keep_arr[:nk].copy()


def nmw_kernel(boxes, scores, double iou_threshold):
    """See ``pykernels.nmw_kernel``."""
    order, ob, oscores_arr, areas_arr = _sorted_views(boxes, scores)
    cdef Py_ssize_t n = order.shape[0]
    if n == 0:
        return np.zeros(0, dtype=np.int64), np.zeros((0, 4), dtype=np.float64)

    heads_arr = np.empty(n, dtype=np.int64)
    merged_arr = np.empty((n, 4), dtype=np.float64)
    alive_arr = np.ones(n, dtype=np.uint8)

    cdef const cnp.int64_t[::1] order_v = order
    cdef const double[:, ::1] b = ob
    cdef const double[::1] oscores = oscores_arr
    cdef const double[::1] areas = areas_arr
    cdef cnp.int64_t[::1] heads = heads_arr
    cdef double[:, ::1] merged = merged_arr
    cdef cnp.uint8_t[::1] alive = alive_arr
    cdef Py_ssize_t k, j, c, nk = 0, nmembers
    cdef double iou, w, total_w
    cdef double off0, off1, off2, off3

    with nogil:
        for k in range(n):
            if not alive[k]:
                continue
            heads[nk] = order_v[k]
            total_w = oscores[k] * (1.0 if areas[k] > 0.0 else 0.0)
            off0 = off1 = off2 = off3 = 0.0
            nmembers = 0
            for j in range(k + 1, n):
                if alive[j]:
                    iou = _pair_iou(b, areas, k, j)
                    if iou > iou_threshold:
                        alive[j] = 0
                        w = oscores[j] * iou
                        off0 += w * (b[j, 0] - b[k, 0])
                        off1 += w * (b[j, 1] - b[k, 1])
                        off2 += w * (b[j, 2] - b[k, 2])
                        off3 += w * (b[j, 3] - b[k, 3])
                        total_w += w
                        nmembers += 1
            if nmembers == 0 or total_w <= 0.0:
                for c in range(4):
                    merged[nk, c] = b[k, c]
            else:
                merged[nk, 0] = b[k, 0] + off0 / total_w
                merged[nk, 1] = b[k, 1] + off1 / total_w
                merged[nk, 2] = b[k, 2] + off2 / total_w
                merged[nk, 3] = b[k, 3] + off3 / total_w
            nk += 1
    return heads_arr[:nk].copy(), merged_arr[:nk].copy()


def greedy_match_kernel(det_boxes, gt_boxes, double iou_threshold):
    """See ``pykernels.greedy_match_kernel``."""
    det = np.ascontiguousarray(det_boxes, dtype=np.float64).reshape(-1, 4)
    gt = np.ascontiguousarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    cdef Py_ssize_t n_det = det.shape[0]
    cdef Py_ssize_t n_gt = gt.shape[0]
    out_arr = np.full(n_det, -1, dtype=np.int64)
    if n_gt == 0 or n_det == 0:
        return out_arr

    det_areas = np.ascontiguousarray((det[:, 2] - det[:, 0]) * (det[:, 3] - det[:, 1]))
    gt_areas = np.ascontiguousarray((gt[:, 2] - gt[:, 0]) * (gt[:, 3] - gt[:, 1]))
    taken_arr = np.zeros(n_gt, dtype=np.uint8)

    cdef const double[:, ::1] d_v = det
    cdef const double[:, ::1] g_v = gt
    cdef const double[::1] d_areas = det_areas
    cdef const double[::1] g_areas = gt_areas
    cdef cnp.int64_t[::1] out = out_arr
    cdef cnp.uint8_t[::1] taken = taken_arr
    cdef Py_ssize_t d, g, best
    cdef double iou, best_iou

    with nogil:
        for d in range(n_det):
            best = -1
            best_iou = -1.0
            for g in range(n_gt):
                if taken[g]:
                    continue
                iou = _cross_iou(d_v, d_areas, g_v, g_areas, d, g)
                if iou > best_iou:
                    best = g
                    best_iou = iou
            if best >= 0 and best_iou >= iou_threshold:
                out[d] = best
                taken[best] = 1
    return out_arr
