"""Axis-aligned box arithmetic.

Boxes are continuous ``(x_min, y_min, x_max, y_max)`` rectangles; zero-area
(degenerate) boxes are legal everywhere and never raise. Scalar helpers work
on :class:`BBox`; the ``*_matrix`` variants operate on ``(N, 4)`` float64
arrays and back the hot paths in assignment, suppression and evaluation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np


@dataclass(frozen=True)
class BBox:
    """Axis-aligned rectangle in absolute coordinates."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        for v in (self.x_min, self.y_min, self.x_max, self.y_max):
            if not math.isfinite(v):
                raise ValueError(f"box coordinates must be finite, got {self!r}")
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise ValueError(f"box has negative extent: {self!r}")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)


def area(b: BBox) -> float:
    """Area of a box; zero for degenerate boxes."""
    return (b.x_max - b.x_min) * (b.y_max - b.y_min)


def _intersection_area(a: BBox, b: BBox) -> float:
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    return iw * ih


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union; 0 when the union has zero area."""
    inter = _intersection_area(a, b)
    union = area(a) + area(b) - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def containment_fraction(inner: BBox, outer: BBox) -> float:
    """Fraction of ``inner``'s area lying inside ``outer``.

    Degenerate ``inner`` boxes carry no area, so containment degrades to a
    geometric point/segment test: 1.0 if ``inner`` lies fully within
    ``outer``, else 0.0.
    """
    a = area(inner)
    if a <= 0.0:
        within = (
            inner.x_min >= outer.x_min
            and inner.x_max <= outer.x_max
            and inner.y_min >= outer.y_min
            and inner.y_max <= outer.y_max
        )
        return 1.0 if within else 0.0
    return _intersection_area(inner, outer) / a


def boxes_to_array(boxes: Iterable[BBox] | Sequence[BBox]) -> np.ndarray:
    """Stack boxes into an ``(N, 4)`` float64 array (x_min, y_min, x_max, y_max)."""
    boxes = list(boxes)
    if not boxes:
        return np.zeros((0, 4), dtype=np.float64)
    return np.asarray([b.as_tuple() for b in boxes], dtype=np.float64)


def array_to_boxes(arr: np.ndarray) -> list[BBox]:
    return [BBox(*map(float, row)) for row in np.asarray(arr, dtype=np.float64)]


def _pairwise_intersection(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    return np.clip(iw, 0.0, None) * np.clip(ih, 0.0, None)


def _areas(a: np.ndarray) -> np.ndarray:
    return (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU of two box arrays, shape ``(len(a), len(b))``."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    inter = _pairwise_intersection(a, b)
    union = _areas(a)[:, None] + _areas(b)[None, :] - inter
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=union > 0.0)
    return out


def containment_matrix(inner: np.ndarray, outer: np.ndarray) -> np.ndarray:
    """Pairwise containment fraction, shape ``(len(inner), len(outer))``.

    Rows for zero-area inner boxes follow the scalar point/segment rule.
    """
    inner = np.asarray(inner, dtype=np.float64).reshape(-1, 4)
    outer = np.asarray(outer, dtype=np.float64).reshape(-1, 4)
    inter = _pairwise_intersection(inner, outer)
    areas = _areas(inner)
    out = np.zeros_like(inter)
    np.divide(inter, areas[:, None], out=out, where=areas[:, None] > 0.0)
    degenerate = areas <= 0.0
    if degenerate.any():
        within = (
            (inner[:, None, 0] >= outer[None, :, 0])
            & (inner[:, None, 2] <= outer[None, :, 2])
            & (inner[:, None, 1] >= outer[None, :, 1])
            & (inner[:, None, 3] <= outer[None, :, 3])
        )
        out[degenerate] = within[degenerate].astype(np.float64)
    return out
