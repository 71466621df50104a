"""Pure-Python/numpy fallback for the suppression and matching kernels.

Semantics are pinned here and mirrored exactly by the compiled Cython
module; the two must produce bit-identical outputs. Greedy passes visit
detections in descending-score order with ties broken by input position
(stable argsort), and all per-cluster accumulation runs sequentially in that
same order so float rounding matches the compiled loop.
"""

from __future__ import annotations

import numpy as np


def _prepare(boxes, scores):
    boxes = np.ascontiguousarray(boxes, dtype=np.float64).reshape(-1, 4)
    scores = np.ascontiguousarray(scores, dtype=np.float64).reshape(-1)
    if boxes.shape[0] != scores.shape[0]:
        raise ValueError("boxes and scores must have equal length")
    return boxes, scores


def _iou_row(box, area, boxes, areas):
    iw = np.minimum(box[2], boxes[:, 2]) - np.maximum(box[0], boxes[:, 0])
    ih = np.minimum(box[3], boxes[:, 3]) - np.maximum(box[1], boxes[:, 1])
    inter = np.clip(iw, 0.0, None) * np.clip(ih, 0.0, None)
    union = area + areas - inter
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=union > 0.0)
    return out


def nms_kernel(boxes, scores, iou_threshold: float) -> np.ndarray:
    """Greedy NMS. Returns kept input indices in pick (descending score) order.

    A remaining box is discarded when its IoU with the picked box is
    strictly greater than ``iou_threshold``.
    """
    boxes, scores = _prepare(boxes, scores)
    n = scores.shape[0]
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    order = np.argsort(-scores, kind="stable")
    ob = boxes[order]
    areas = (ob[:, 2] - ob[:, 0]) * (ob[:, 3] - ob[:, 1])
    alive = np.ones(n, dtype=bool)
    keep = []
    for k in range(n):
        if not alive[k]:
            continue
        keep.append(order[k])
        if k + 1 < n:
            ious = _iou_row(ob[k], areas[k], ob[k + 1 :], areas[k + 1 :])
            alive[k + 1 :] &= ~(ious > iou_threshold)
    return np.asarray(keep, dtype=np.int64)


def nmw_kernel(boxes, scores, iou_threshold: float):
    """Greedy weighted merging (non-maximum weighted).

    Clusters form exactly as in :func:`nms_kernel`; each cluster emits one
    box, the member-weighted mean with weight ``score * IoU(member, head)``
    (the head participates at weight ``score * 1``). Returns
    ``(head_indices, merged_boxes)`` where singleton clusters copy the head
    box verbatim.

    The mean is accumulated as head plus weighted offsets from the head,
    which is the same value algebraically but keeps identical inputs exactly
    identical in floating point.
    """
    boxes, scores = _prepare(boxes, scores)
    n = scores.shape[0]
    if n == 0:
        return np.zeros(0, dtype=np.int64), np.zeros((0, 4), dtype=np.float64)
    order = np.argsort(-scores, kind="stable")
    ob = boxes[order]
    oscores = scores[order]
    areas = (ob[:, 2] - ob[:, 0]) * (ob[:, 3] - ob[:, 1])
    alive = np.ones(n, dtype=bool)
    heads = []
    merged = []
    for k in range(n):
        if not alive[k]:
            continue
        heads.append(order[k])
        members = []
        member_weights = []
        if k + 1 < n:
            ious = _iou_row(ob[k], areas[k], ob[k + 1 :], areas[k + 1 :])
            for off, j in enumerate(range(k + 1, n)):
                if alive[j] and ious[off] > iou_threshold:
                    alive[j] = False
                    members.append(j)
                    member_weights.append(oscores[j] * ious[off])
        if not members:
            merged.append(ob[k].copy())
            continue
        total_w = oscores[k] * (1.0 if areas[k] > 0.0 else 0.0)
        offsets = np.zeros(4, dtype=np.float64)
        for j, w in zip(members, member_weights):
            offsets += w * (ob[j] - ob[k])
            total_w += w
        if total_w > 0.0:
            merged.append(ob[k] + offsets / total_w)
        else:
            merged.append(ob[k].copy())
    return np.asarray(heads, dtype=np.int64), np.vstack(merged)


def greedy_match_kernel(det_boxes, gt_boxes, iou_threshold: float) -> np.ndarray:
    """Match score-sorted detections to ground truth boxes, one gt each.

    ``det_boxes`` must already be in descending-score order. Each detection
    takes the unmatched gt with the highest IoU at or above
    ``iou_threshold`` (lowest gt index on ties). Returns the matched gt
    index per detection, -1 for unmatched.
    """
    det_boxes = np.ascontiguousarray(det_boxes, dtype=np.float64).reshape(-1, 4)
    gt_boxes = np.ascontiguousarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    n_det = det_boxes.shape[0]
    n_gt = gt_boxes.shape[0]
    out = np.full(n_det, -1, dtype=np.int64)
    if n_gt == 0:
        return out
    gt_areas = (gt_boxes[:, 2] - gt_boxes[:, 0]) * (gt_boxes[:, 3] - gt_boxes[:, 1])
    taken = np.zeros(n_gt, dtype=bool)
    for d in range(n_det):
        box = det_boxes[d]
        darea = (box[2] - box[0]) * (box[3] - box[1])
        ious = _iou_row(box, darea, gt_boxes, gt_areas)
        ious[taken] = -1.0
        best = int(np.argmax(ious))
        if ious[best] >= iou_threshold:
            out[d] = best
            taken[best] = True
    return out
