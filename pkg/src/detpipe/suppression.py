"""Duplicate-detection removal: greedy NMS and non-maximum weighted merging.

Both run class-wise per image. NMS keeps the highest-score box of each
greedy cluster; NMW replaces the cluster with a single box whose coordinates
are the weighted mean of the members (weight = score times IoU against the
cluster head) while keeping the head's score. The O(n^2) greedy loops live
in :mod:`detpipe._kernels` (compiled when available).
"""

from __future__ import annotations

from dataclasses import replace
from typing import Sequence

import numpy as np

from ._kernels import nms_kernel, nmw_kernel
from ._parallel import map_ordered
from .annotations import Detection
from .errors import DomainError, MixedGroupError
from .geometry import BBox, boxes_to_array

METHODS = ("nms", "nmw")


def _check_threshold(iou_threshold):
    if not (0.0 < iou_threshold < 1.0):
        raise DomainError(f"iou_threshold must lie in (0, 1), got {iou_threshold}")


def _check_single_group(dets: Sequence[Detection]):
    groups = {(d.image_id, d.class_id) for d in dets}
    if len(groups) > 1:
        raise MixedGroupError(f"detections span {len(groups)} (image, class) groups: {sorted(groups)}")


def _scores(dets):
    return np.asarray([d.score for d in dets], dtype=np.float64)


def nms(dets: Sequence[Detection], iou_threshold: float = 0.5) -> list[Detection]:
    """Greedy NMS over one (image, class) group.

    Repeatedly keeps the highest-score remaining detection and discards the
    rest with IoU strictly above the threshold. Score ties break by input
    order. Output is sorted by descending score and is a subset of the
    input.
    """
    _check_threshold(iou_threshold)
    if not dets:
        return []
    _check_single_group(dets)
    keep = nms_kernel(boxes_to_array(d.box for d in dets), _scores(dets), iou_threshold)
    return [dets[i] for i in keep]


def nmw(dets: Sequence[Detection], iou_threshold: float = 0.5) -> list[Detection]:
    """Non-maximum weighted merging over one (image, class) group.

    Clusters are the same as under :func:`nms`; each emits one detection at
    the head's score with weighted-mean coordinates. Singleton clusters pass
    the head box through bit-identically.
    """
    _check_threshold(iou_threshold)
    if not dets:
        return []
    _check_single_group(dets)
    heads, merged = nmw_kernel(boxes_to_array(d.box for d in dets), _scores(dets), iou_threshold)
    out = []
    for head, row in zip(heads, merged):
        head_det = dets[head]
        box = BBox(float(row[0]), float(row[1]), float(row[2]), float(row[3]))
        out.append(head_det if box == head_det.box else replace(head_det, box=box))
    return out


def _suppress_classwise_indexed(
    dets: Sequence[Detection], method: str, iou_threshold: float, threads: int = 1
) -> tuple[list[Detection], list[int]]:
    """Class-wise suppression that also reports each output's head input index."""
    if method not in METHODS:
        raise DomainError(f"method must be one of {METHODS}, got {method!r}")
    _check_threshold(iou_threshold)
    groups: dict[tuple[str, str], list[int]] = {}
    for i, d in enumerate(dets):
        groups.setdefault((d.image_id, d.class_id), []).append(i)

    def _one(indices):
        sub = [dets[i] for i in indices]
        boxes = boxes_to_array(d.box for d in sub)
        scores = _scores(sub)
        if method == "nms":
            keep = nms_kernel(boxes, scores, iou_threshold)
            return [(sub[k], indices[k]) for k in keep]
        heads, merged = nmw_kernel(boxes, scores, iou_threshold)
        out = []
        for head, row in zip(heads, merged):
            head_det = sub[head]
            box = BBox(float(row[0]), float(row[1]), float(row[2]), float(row[3]))
            det = head_det if box == head_det.box else replace(head_det, box=box)
            out.append((det, indices[head]))
        return out

    results = map_ordered(_one, list(groups.values()), threads)
    kept: list[Detection] = []
    origin: list[int] = []
    for chunk in results:
        for det, idx in chunk:
            kept.append(det)
            origin.append(idx)
    return kept, origin


def suppress_classwise(
    dets: Sequence[Detection],
    method: str = "nms",
    iou_threshold: float = 0.5,
    threads: int = 1,
) -> list[Detection]:
    """Partition by (image, class), suppress each partition, concatenate.

    Partitions appear in first-occurrence order of their (image, class)
    key, so output order is deterministic for a given input order.
    """
    kept, _ = _suppress_classwise_indexed(dets, method, iou_threshold, threads)
    return kept
