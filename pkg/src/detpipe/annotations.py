"""Ingestion and validation of OID-format annotation files.

All formats are header-driven CSV (plus JSON-lines for detections). Column
lookup is by name, so extra columns are tolerated on input, but writers emit
the canonical OID column order. Parsing is strict by default: a malformed row
raises :class:`ParseError` naming the line. With ``lenient=True`` bad rows
are skipped with a logged warning instead, so every input row is either
parsed or reported.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence, TextIO

from .errors import (
    ConflictError,
    ParseError,
    SelfPairError,
    UnknownClassError,
)
from .geometry import BBox
from .hierarchy import ClassHierarchy

logger = logging.getLogger(__name__)

GROUND_TRUTH_COLUMNS = ("ImageID", "LabelName", "XMin", "XMax", "YMin", "YMax", "IsGroupOf")
VERIFICATION_COLUMNS = ("ImageID", "LabelName", "Confidence")
DETECTION_COLUMNS = ("ImageID", "LabelName", "Score", "XMin", "XMax", "YMin", "YMax")
PAIR_COLUMNS = ("SubjectLabelName", "PartLabelName")
PROPOSAL_COLUMNS = ("ImageID", "XMin", "XMax", "YMin", "YMax")


@dataclass(frozen=True)
class GroundTruthBox:
    image_id: str
    class_id: str
    box: BBox
    is_group_of: bool = False


@dataclass(frozen=True)
class ImageVerification:
    """Per-image verified-positive / verified-negative class sets."""

    image_id: str
    verified_positive: frozenset[str] = field(default_factory=frozenset)
    verified_negative: frozenset[str] = field(default_factory=frozenset)

    def __post_init__(self):
        both = self.verified_positive & self.verified_negative
        if both:
            raise ConflictError(
                f"image {self.image_id!r}: classes verified both "
                f"positive and negative: {sorted(both)}"
            )

    def is_verified(self, class_id: str) -> bool:
        return class_id in self.verified_positive or class_id in self.verified_negative


@dataclass(frozen=True)
class Detection:
    image_id: str
    class_id: str
    score: float
    box: BBox

    def __post_init__(self):
        if not (0.0 <= self.score <= 1.0):
            raise ValueError(f"score must lie in [0, 1], got {self.score}")


@dataclass(frozen=True)
class CooccurrencePair:
    """``part`` instances typically appear inside ``subject`` boxes."""

    subject: str
    part: str

    def __post_init__(self):
        if self.subject == self.part:
            raise SelfPairError(f"co-occurrence pair of a class with itself: {self.subject!r}")


def _column_map(header, required, path):
    names = [h.strip() for h in header]
    missing = [c for c in required if c not in names]
    if missing:
        raise ParseError(f"missing columns {missing} in header {names}", path=path, line=1)
    return {c: names.index(c) for c in required}


def _rows(source, required):
    """Yield (lineno, row-dict) from a header-driven CSV path or text stream."""
    if hasattr(source, "read"):
        yield from _rows_from(source, required, getattr(source, "name", "<stream>"))
    else:
        with open(source, "r", encoding="utf-8", newline="") as fh:
            yield from _rows_from(fh, required, source)


def _rows_from(fh, required, path):
    reader = csv.reader(fh)
    header = next(reader, None)
    if header is None:
        raise ParseError("empty file, expected a header row", path=path, line=1)
    cols = _column_map(header, required, path)
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) < len(header):
            raise ParseError(
                f"expected at least {len(header)} columns, got {len(row)}",
                path=path,
                line=lineno,
            )
        yield lineno, {c: row[i].strip() for c, i in cols.items()}


def _parse_float(value, name, path, lineno):
    try:
        out = float(value)
    except ValueError:
        raise ParseError(f"{name} is not a number: {value!r}", path=path, line=lineno) from None
    if out != out or out in (float("inf"), float("-inf")):
        raise ParseError(f"{name} is not finite: {value!r}", path=path, line=lineno)
    return out


def _parse_box(rec, path, lineno):
    x_min = _parse_float(rec["XMin"], "XMin", path, lineno)
    x_max = _parse_float(rec["XMax"], "XMax", path, lineno)
    y_min = _parse_float(rec["YMin"], "YMin", path, lineno)
    y_max = _parse_float(rec["YMax"], "YMax", path, lineno)
    if x_min > x_max:
        raise ParseError(f"XMin {x_min} > XMax {x_max}", path=path, line=lineno)
    if y_min > y_max:
        raise ParseError(f"YMin {y_min} > YMax {y_max}", path=path, line=lineno)
    return BBox(x_min, y_min, x_max, y_max)


def _resolve_class(label, hierarchy, path, lineno):
    if hierarchy is not None and label not in hierarchy:
        raise UnknownClassError(f"{path}:{lineno}: unknown class {label!r}")
    return label


def load_ground_truth(
    path,
    hierarchy: ClassHierarchy | None,
    image_sizes: Mapping[str, tuple[float, float]] | None = None,
    lenient: bool = False,
) -> list[GroundTruthBox]:
    """Load OID ground truth CSV (ImageID,LabelName,XMin,XMax,YMin,YMax,IsGroupOf).

    Coordinates are kept as given unless ``image_sizes`` maps every image to a
    (width, height); then x is scaled by width and y by height.
    """
    out = []
    for lineno, rec in _rows(path, GROUND_TRUTH_COLUMNS):
        try:
            label = _resolve_class(rec["LabelName"], hierarchy, path, lineno)
            box = _parse_box(rec, path, lineno)
            flag = rec["IsGroupOf"]
            if flag not in ("0", "1"):
                raise ParseError(f"IsGroupOf must be 0 or 1, got {flag!r}", path=path, line=lineno)
            if image_sizes is not None:
                image_id = rec["ImageID"]
                if image_id not in image_sizes:
                    raise ParseError(f"no image size for {image_id!r}", path=path, line=lineno)
                w, h = image_sizes[image_id]
                box = BBox(box.x_min * w, box.y_min * h, box.x_max * w, box.y_max * h)
            out.append(
                GroundTruthBox(
                    image_id=rec["ImageID"],
                    class_id=label,
                    box=box,
                    is_group_of=flag == "1",
                )
            )
        except (ParseError, UnknownClassError):
            if not lenient:
                raise
            logger.warning("%s:%d: skipping malformed ground truth row", path, lineno)
    return out


def load_verifications(
    path, hierarchy: ClassHierarchy | None, lenient: bool = False
) -> dict[str, ImageVerification]:
    """Load image-level verification CSV (ImageID,LabelName,Confidence in {0,1}).

    Confidence 1 means verified present, 0 verified absent. Duplicate
    consistent rows collapse; contradictions raise :class:`ConflictError`.
    """
    pos: dict[str, set[str]] = {}
    neg: dict[str, set[str]] = {}
    for lineno, rec in _rows(path, VERIFICATION_COLUMNS):
        try:
            label = _resolve_class(rec["LabelName"], hierarchy, path, lineno)
            conf = rec["Confidence"]
            if conf not in ("0", "1"):
                raise ParseError(
                    f"Confidence must be 0 or 1, got {conf!r}", path=path, line=lineno
                )
            image_id = rec["ImageID"]
            target = pos if conf == "1" else neg
            other = neg if conf == "1" else pos
            if label in other.setdefault(image_id, set()):
                raise ConflictError(
                    f"{path}:{lineno}: image {image_id!r} class {label!r} "
                    "verified both positive and negative"
                )
            target.setdefault(image_id, set()).add(label)
        except (ParseError, UnknownClassError):
            if not lenient:
                raise
            logger.warning("%s:%d: skipping malformed verification row", path, lineno)
    return {
        image_id: ImageVerification(
            image_id=image_id,
            verified_positive=frozenset(pos.get(image_id, ())),
            verified_negative=frozenset(neg.get(image_id, ())),
        )
        for image_id in sorted(set(pos) | set(neg))
    }


def load_detections(
    path,
    hierarchy: ClassHierarchy | None = None,
    fmt: str | None = None,
    lenient: bool = False,
) -> list[Detection]:
    """Load detections from CSV or JSON-lines (same field names either way).

    ``fmt`` is ``"csv"`` or ``"jsonl"``; by default it is inferred from the
    file suffix, falling back to CSV. Scores outside [0, 1] are parse errors,
    never clamped.
    """
    if fmt is None:
        fmt = "jsonl" if str(path).endswith((".jsonl", ".json")) else "csv"
    if fmt == "csv":
        return _load_detections_csv(path, hierarchy, lenient)
    if fmt == "jsonl":
        return _load_detections_jsonl(path, hierarchy, lenient)
    raise ValueError(f"unknown detections format {fmt!r}")


def _detection_from_record(rec, hierarchy, path, lineno):
    label = _resolve_class(rec["LabelName"], hierarchy, path, lineno)
    score = _parse_float(rec["Score"], "Score", path, lineno)
    if not (0.0 <= score <= 1.0):
        raise ParseError(f"Score {score} outside [0, 1]", path=path, line=lineno)
    box = _parse_box(rec, path, lineno)
    return Detection(image_id=rec["ImageID"], class_id=label, score=score, box=box)


def _display_name(source):
    if hasattr(source, "read"):
        return getattr(source, "name", "<stream>")
    return source


def _load_detections_csv(source, hierarchy, lenient):
    display = _display_name(source)
    out = []
    for lineno, rec in _rows(source, DETECTION_COLUMNS):
        try:
            out.append(_detection_from_record(rec, hierarchy, display, lineno))
        except (ParseError, UnknownClassError):
            if not lenient:
                raise
            logger.warning("%s:%d: skipping malformed detection row", display, lineno)
    return out


def _load_detections_jsonl(source, hierarchy, lenient):
    display = _display_name(source)
    if hasattr(source, "read"):
        return _detections_from_jsonl(source, hierarchy, lenient, display)
    with open(source, "r", encoding="utf-8") as fh:
        return _detections_from_jsonl(fh, hierarchy, lenient, display)


def _detections_from_jsonl(fh, hierarchy, lenient, display):
    out = []
    for lineno, line in enumerate(fh, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc}", path=display, line=lineno) from None
            missing = [c for c in DETECTION_COLUMNS if c not in obj]
            if missing:
                raise ParseError(f"missing fields {missing}", path=display, line=lineno)
            rec = {c: str(obj[c]) for c in DETECTION_COLUMNS}
            out.append(_detection_from_record(rec, hierarchy, display, lineno))
        except (ParseError, UnknownClassError):
            if not lenient:
                raise
            logger.warning("%s:%d: skipping malformed detection line", display, lineno)
    return out


def load_cooccurrence_pairs(
    path, hierarchy: ClassHierarchy | None, lenient: bool = False
) -> list[CooccurrencePair]:
    """Load subject/part pairs CSV (SubjectLabelName,PartLabelName), deduplicated."""
    out: list[CooccurrencePair] = []
    seen = set()
    for lineno, rec in _rows(path, PAIR_COLUMNS):
        try:
            subject = _resolve_class(rec["SubjectLabelName"], hierarchy, path, lineno)
            part = _resolve_class(rec["PartLabelName"], hierarchy, path, lineno)
            if subject == part:
                raise SelfPairError(
                    f"{path}:{lineno}: pair of class {subject!r} with itself"
                )
            key = (subject, part)
            if key in seen:
                continue
            seen.add(key)
            out.append(CooccurrencePair(subject=subject, part=part))
        except (ParseError, UnknownClassError, SelfPairError):
            if not lenient:
                raise
            logger.warning("%s:%d: skipping malformed pair row", path, lineno)
    return out


OCCURRENCE_COLUMNS = ("LabelName", "Count")


def load_occurrence(path, hierarchy: ClassHierarchy | None = None) -> dict[str, int]:
    """Load per-class occurrence counts CSV (LabelName,Count)."""
    display = _display_name(path)
    out: dict[str, int] = {}
    for lineno, rec in _rows(path, OCCURRENCE_COLUMNS):
        label = _resolve_class(rec["LabelName"], hierarchy, display, lineno)
        try:
            count = int(rec["Count"])
        except ValueError:
            raise ParseError(
                f"Count is not an integer: {rec['Count']!r}", path=display, line=lineno
            ) from None
        if count < 0:
            raise ParseError(f"Count must be >= 0, got {count}", path=display, line=lineno)
        out[label] = count
    return out


def load_proposals(path, lenient: bool = False) -> dict[str, list[BBox]]:
    """Load classless proposal boxes CSV (ImageID,XMin,XMax,YMin,YMax).

    Returns boxes grouped by image in row order.
    """
    out: dict[str, list[BBox]] = {}
    for lineno, rec in _rows(path, PROPOSAL_COLUMNS):
        try:
            box = _parse_box(rec, path, lineno)
        except ParseError:
            if not lenient:
                raise
            logger.warning("%s:%d: skipping malformed proposal row", path, lineno)
            continue
        out.setdefault(rec["ImageID"], []).append(box)
    return out


# -- writers ---------------------------------------------------------------


def _fmt(value: float) -> str:
    return repr(float(value))


def write_detections(
    target, detections: Sequence[Detection], sources: Sequence[str] | None = None
) -> None:
    """Write detections CSV in canonical column order.

    ``sources`` appends a SourceRun provenance column (used by the pipeline's
    fused output); it must align 1:1 with ``detections``.
    """
    if sources is not None and len(sources) != len(detections):
        raise ValueError("sources must align with detections")

    def _write(fh: TextIO):
        writer = csv.writer(fh, lineterminator="\n")
        header = list(DETECTION_COLUMNS) + (["SourceRun"] if sources is not None else [])
        writer.writerow(header)
        for i, d in enumerate(detections):
            row = [
                d.image_id,
                d.class_id,
                _fmt(d.score),
                _fmt(d.box.x_min),
                _fmt(d.box.x_max),
                _fmt(d.box.y_min),
                _fmt(d.box.y_max),
            ]
            if sources is not None:
                row.append(sources[i])
            writer.writerow(row)

    if hasattr(target, "write"):
        _write(target)
    else:
        with open(target, "w", encoding="utf-8", newline="") as fh:
            _write(fh)


def write_detections_jsonl(target, detections: Sequence[Detection]) -> None:
    def _write(fh: TextIO):
        for d in detections:
            fh.write(
                json.dumps(
                    {
                        "ImageID": d.image_id,
                        "LabelName": d.class_id,
                        "Score": d.score,
                        "XMin": d.box.x_min,
                        "XMax": d.box.x_max,
                        "YMin": d.box.y_min,
                        "YMax": d.box.y_max,
                    }
                )
                + "\n"
            )

    if hasattr(target, "write"):
        _write(target)
    else:
        with open(target, "w", encoding="utf-8") as fh:
            _write(fh)


def write_ground_truth(target, gts: Sequence[GroundTruthBox]) -> None:
    def _write(fh: TextIO):
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(GROUND_TRUTH_COLUMNS)
        for g in gts:
            writer.writerow(
                [
                    g.image_id,
                    g.class_id,
                    _fmt(g.box.x_min),
                    _fmt(g.box.x_max),
                    _fmt(g.box.y_min),
                    _fmt(g.box.y_max),
                    "1" if g.is_group_of else "0",
                ]
            )

    if hasattr(target, "write"):
        _write(target)
    else:
        with open(target, "w", encoding="utf-8", newline="") as fh:
            _write(fh)


def write_verifications(target, verifications: Mapping[str, ImageVerification]) -> None:
    def _write(fh: TextIO):
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(VERIFICATION_COLUMNS)
        for image_id in sorted(verifications):
            v = verifications[image_id]
            for label in sorted(v.verified_positive):
                writer.writerow([image_id, label, "1"])
            for label in sorted(v.verified_negative):
                writer.writerow([image_id, label, "0"])

    if hasattr(target, "write"):
        _write(target)
    else:
        with open(target, "w", encoding="utf-8", newline="") as fh:
            _write(fh)


def write_proposals(target, proposals: Mapping[str, Sequence[BBox]]) -> None:
    def _write(fh: TextIO):
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(PROPOSAL_COLUMNS)
        for image_id, boxes in proposals.items():
            for b in boxes:
                writer.writerow(
                    [image_id, _fmt(b.x_min), _fmt(b.x_max), _fmt(b.y_min), _fmt(b.y_max)]
                )

    if hasattr(target, "write"):
        _write(target)
    else:
        with open(target, "w", encoding="utf-8", newline="") as fh:
            _write(fh)


def group_by_image(items: Iterable) -> dict[str, list]:
    """Group any objects carrying ``image_id`` by image, preserving order."""
    out: dict[str, list] = {}
    for item in items:
        out.setdefault(item.image_id, []).append(item)
    return out
