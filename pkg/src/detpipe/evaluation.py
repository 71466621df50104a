"""Per-class average precision and mAP over sparsely verified images.

A class is scored only on images where it was human-verified (present or
absent); detections of the class on any other image are dropped before
scoring, so unverified classes can never produce false positives. Ground
truth labels optionally count for all their ancestors, matching how boxes
inherit semantics up the class hierarchy. AP uses the continuous
(all-points) interpolation of the precision-recall curve.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from ._kernels import greedy_match_kernel
from ._parallel import map_ordered
from .annotations import Detection, GroundTruthBox, ImageVerification
from .errors import DomainError, UnknownClassError
from .geometry import iou_matrix
from .hierarchy import ClassHierarchy


@dataclass(frozen=True)
class EvalConfig:
    """Evaluation knobs.

    ``expand_gt`` makes a ground-truth box count for its class and every
    ancestor. ``expand_detections`` applies the same expansion to
    detections (off by default; submission files are normally already
    expanded). ``ignore_group_of`` removes group boxes from the gt pool
    and silently drops detections that match one, so they are neither
    true nor false positives.
    """

    iou_threshold: float = 0.5
    expand_gt: bool = True
    expand_detections: bool = False
    ignore_group_of: bool = False

    def __post_init__(self):
        if not (0.0 < self.iou_threshold < 1.0):
            raise DomainError(
                f"iou_threshold must lie in (0, 1), got {self.iou_threshold}"
            )


@dataclass(frozen=True)
class ClassAPReport:
    """Scoring summary for one class.

    ``ap`` is None when the class has no ground truth on its evaluated
    images; such classes are excluded from every mean. ``num_det`` counts
    the detections that entered the precision-recall curve.
    """

    class_id: str
    ap: float | None
    num_gt: int
    num_det: int
    evaluated_image_count: int


def average_precision(tp_flags: Sequence[bool], num_gt: int) -> float:
    """Area under the PR curve, all-points interpolation.

    ``tp_flags`` must be ordered by descending detection score. Recall is
    padded to [0, 1] and precision to 0 at both ends, the precision
    envelope is taken right to left, and the area sums
    ``(r[i] - r[i-1]) * p[i]``.
    """
    if num_gt <= 0:
        raise DomainError("average_precision requires num_gt > 0")
    flags = np.asarray(tp_flags, dtype=np.float64).reshape(-1)
    tp_cum = np.cumsum(flags)
    fp_cum = np.cumsum(1.0 - flags)
    recall = tp_cum / num_gt
    denom = tp_cum + fp_cum
    precision = np.divide(tp_cum, denom, out=np.zeros_like(tp_cum), where=denom > 0)
    mrec = np.concatenate(([0.0], recall, [1.0]))
    mpre = np.concatenate(([0.0], precision, [0.0]))
    for i in range(mpre.shape[0] - 2, -1, -1):
        if mpre[i] < mpre[i + 1]:
            mpre[i] = mpre[i + 1]
    changed = np.flatnonzero(mrec[1:] != mrec[:-1]) + 1
    return float(np.sum((mrec[changed] - mrec[changed - 1]) * mpre[changed]))


def _expanded(class_id: str, hierarchy: ClassHierarchy, expand: bool) -> Iterable[str]:
    if not expand:
        return (class_id,)
    return (class_id, *sorted(hierarchy.ancestors(class_id)))


def _check_known(class_id: str, hierarchy: ClassHierarchy, origin: str):
    if class_id not in hierarchy:
        raise UnknownClassError(f"{origin} references unknown class {class_id!r}")


def _score_class(
    class_id: str,
    images: Sequence[str],
    gt_by_image: Mapping[str, list[tuple[GroundTruthBox, bool]]],
    det_by_image: Mapping[str, list[Detection]],
    config: EvalConfig,
) -> ClassAPReport:
    """Build one class's PR curve over its evaluated images."""
    num_gt = 0
    scores: list[float] = []
    flags: list[bool] = []
    for image_id in images:
        pairs = gt_by_image.get(image_id, [])
        if config.ignore_group_of:
            plain = [g for g, group in pairs if not group]
            groups = [g for g, group in pairs if group]
        else:
            plain = [g for g, _ in pairs]
            groups = []
        num_gt += len(plain)

        dets = det_by_image.get(image_id, [])
        if not dets:
            continue
        det_scores = np.asarray([d.score for d in dets], dtype=np.float64)
        order = np.argsort(-det_scores, kind="stable")
        det_boxes = np.asarray(
            [dets[i].box.as_tuple() for i in order], dtype=np.float64
        ).reshape(-1, 4)

        if plain:
            gt_boxes = np.asarray([g.box.as_tuple() for g in plain], dtype=np.float64)
            matched = greedy_match_kernel(det_boxes, gt_boxes, config.iou_threshold)
        else:
            matched = np.full(len(dets), -1, dtype=np.int64)

        dropped = np.zeros(len(dets), dtype=bool)
        if groups:
            unmatched = np.flatnonzero(matched < 0)
            if unmatched.size:
                group_boxes = np.asarray(
                    [g.box.as_tuple() for g in groups], dtype=np.float64
                )
                overlap = iou_matrix(det_boxes[unmatched], group_boxes)
                dropped[unmatched] = overlap.max(axis=1) >= config.iou_threshold

        for pos, src in enumerate(order):
            if dropped[pos]:
                continue
            scores.append(float(det_scores[src]))
            flags.append(bool(matched[pos] >= 0))

    num_det = len(scores)
    if num_gt == 0:
        return ClassAPReport(class_id, None, 0, num_det, len(images))
    if num_det == 0:
        return ClassAPReport(class_id, 0.0, num_gt, 0, len(images))
    final = np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")
    ordered_flags = [flags[i] for i in final]
    ap = average_precision(ordered_flags, num_gt)
    return ClassAPReport(class_id, ap, num_gt, num_det, len(images))


def evaluate(
    dets: Sequence[Detection],
    gts: Sequence[GroundTruthBox],
    verifications: Mapping[str, ImageVerification],
    hierarchy: ClassHierarchy,
    config: EvalConfig = EvalConfig(),
    threads: int = 1,
) -> tuple[float, list[ClassAPReport]]:
    """Score every class and return (mAP, per-class reports).

    Per class, only images where the class is verified participate.
    Within an image, detections match greedily in descending score order,
    one ground truth each, at IoU >= threshold. The mAP is the unweighted
    mean over classes with ground truth; it is 0.0 when no class has any.
    Reports follow the hierarchy's class order.
    """
    for v in verifications.values():
        for c in (*v.verified_positive, *v.verified_negative):
            _check_known(c, hierarchy, f"verification for image {v.image_id!r}")

    gt_by_class: dict[str, dict[str, list[tuple[GroundTruthBox, bool]]]] = {}
    for g in gts:
        _check_known(g.class_id, hierarchy, f"ground truth on image {g.image_id!r}")
        for c in _expanded(g.class_id, hierarchy, config.expand_gt):
            gt_by_class.setdefault(c, {}).setdefault(g.image_id, []).append(
                (g, g.is_group_of)
            )

    det_by_class: dict[str, dict[str, list[Detection]]] = {}
    for d in dets:
        _check_known(d.class_id, hierarchy, f"detection on image {d.image_id!r}")
        for c in _expanded(d.class_id, hierarchy, config.expand_detections):
            det_by_class.setdefault(c, {}).setdefault(d.image_id, []).append(d)

    image_order = sorted(verifications)
    class_images = {
        c: [i for i in image_order if verifications[i].is_verified(c)]
        for c in hierarchy.classes
    }

    def one(class_id: str) -> ClassAPReport:
        images = class_images[class_id]
        allowed = set(images)
        masked = {
            img: row
            for img, row in det_by_class.get(class_id, {}).items()
            if img in allowed
        }
        return _score_class(
            class_id, images, gt_by_class.get(class_id, {}), masked, config
        )

    reports = map_ordered(one, list(hierarchy.classes), threads=threads)
    defined = [r.ap for r in reports if r.num_gt > 0]
    mean_ap = sum(defined) / len(defined) if defined else 0.0
    return mean_ap, reports


def mean_over_rank_range(
    reports: Sequence[ClassAPReport],
    occurrence: Mapping[str, int],
    lo: int,
    hi: int,
) -> float:
    """Mean AP over the classes ranked ``lo..hi`` by ascending occurrence.

    Ranks are 1-based and inclusive, ties in occurrence break by class id,
    matching the expert-subset planner. Classes without a defined AP are
    skipped; an empty range after skipping is an error.
    """
    n = len(occurrence)
    if not (1 <= lo <= hi <= n):
        raise DomainError(f"rank range [{lo}, {hi}] invalid for {n} classes")
    by_class = {r.class_id: r for r in reports}
    ranked = sorted(occurrence, key=lambda c: (occurrence[c], c))
    values = []
    for class_id in ranked[lo - 1 : hi]:
        report = by_class.get(class_id)
        if report is not None and report.ap is not None:
            values.append(report.ap)
    if not values:
        raise DomainError(
            f"no class in rank range [{lo}, {hi}] has a defined AP"
        )
    return sum(values) / len(values)


def write_report(target, reports: Sequence[ClassAPReport]) -> None:
    """Write reports as CSV (LabelName,AP,NumGT,NumDet); undefined AP is blank."""

    def _write(fh):
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["LabelName", "AP", "NumGT", "NumDet"])
        for r in reports:
            ap = "" if r.ap is None else repr(r.ap)
            writer.writerow([r.class_id, ap, r.num_gt, r.num_det])

    if hasattr(target, "write"):
        _write(target)
    else:
        with open(target, "w", encoding="utf-8", newline="") as fh:
            _write(fh)


def read_report(path) -> list[ClassAPReport]:
    """Read a report CSV back; evaluated_image_count is not stored and reads as 0."""
    from .errors import ParseError

    out = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:4] != ["LabelName", "AP", "NumGT", "NumDet"]:
            raise ParseError("expected header 'LabelName,AP,NumGT,NumDet'", path=path, line=1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) < 4:
                raise ParseError("expected 4 columns", path=path, line=lineno)
            ap = None if row[1] == "" else float(row[1])
            out.append(ClassAPReport(row[0], ap, int(row[2]), int(row[3]), 0))
    return out
