"""Class-weighted fusion of multiple detector runs.

Every (model, class) pair gets a weight from the models' per-class
validation scores: the best model keeps weight 1, models at or below the
class average get the floor ``alpha``, and everything in between
interpolates linearly. Detection scores are multiplied by these weights,
the runs are concatenated, and duplicate suppression runs once over the
concatenation. Expert runs restricted to a class subset contribute only
that subset.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

from .annotations import Detection, load_detections
from .errors import (
    DomainError,
    MissingScoreError,
    MissingWeightError,
    ParseError,
    SubsetViolationError,
)
from .hierarchy import ClassHierarchy
from .suppression import METHODS, _suppress_classwise_indexed


@dataclass(frozen=True)
class ModelRun:
    """One model's detections plus its per-class validation APs.

    ``class_subset`` marks an expert run; its detections must stay within
    the subset.
    """

    name: str
    detections: tuple[Detection, ...]
    val_scores: Mapping[str, float] = field(default_factory=dict)
    class_subset: frozenset[str] | None = None


@dataclass(frozen=True)
class ClassWeightTable:
    """Per-(model, class) fusion weights with the audit values behind them."""

    weights: Mapping[tuple[str, str], float]
    alpha: float
    class_mean: Mapping[str, float]
    class_top: Mapping[str, float]

    def weight(self, model: str, class_id: str) -> float:
        try:
            return self.weights[(model, class_id)]
        except KeyError:
            raise MissingWeightError(
                f"no weight for model {model!r}, class {class_id!r}"
            ) from None


def _check_alpha(alpha):
    if not (0.0 < alpha <= 1.0):
        raise DomainError(f"alpha must lie in (0, 1], got {alpha}")


def class_weight(s: float, mu: float, t: float, alpha: float) -> float:
    """Fusion weight for one model on one class.

    ``s`` is the model's validation score, ``mu`` the class mean over
    models, ``t`` the class best. Returns 1 when all models are tied
    (``t == mu``), ``alpha`` for models at or below the class mean,
    otherwise the linear interpolation
    ``(s - mu)/(t - mu) + alpha * (t - s)/(t - mu)``.
    """
    for name, v in (("s", s), ("mu", mu), ("t", t)):
        if not (0.0 <= v <= 1.0) or not math.isfinite(v):
            raise DomainError(f"{name} must lie in [0, 1], got {v}")
    _check_alpha(alpha)
    if s > t:
        raise DomainError(f"s ({s}) must not exceed t ({t})")
    if t == mu:
        return 1.0
    if s <= mu:
        # early return keeps the s == mu endpoint exactly alpha; the
        # formula below can round it off by an ulp
        return alpha
    return (s - mu) / (t - mu) + alpha * (t - s) / (t - mu)


def build_weight_table(runs: Sequence[ModelRun], alpha: float = 0.5) -> ClassWeightTable:
    """Compute the weight table from the runs' validation scores.

    A class's mean and top are taken over the models covering it (scored
    and, for experts, inside the subset). A run emitting a class it has no
    validation score for is an error; scored-but-never-emitted classes are
    fine.
    """
    _check_alpha(alpha)
    names = [r.name for r in runs]
    if len(set(names)) != len(names):
        raise DomainError(f"duplicate run names: {names}")

    coverage: dict[str, list[tuple[str, float]]] = {}
    for run in runs:
        emitted = {d.class_id for d in run.detections}
        unscored = emitted - set(run.val_scores)
        if unscored:
            raise MissingScoreError(
                f"run {run.name!r} emits classes without validation scores: "
                f"{sorted(unscored)}"
            )
        for class_id, s in run.val_scores.items():
            if run.class_subset is not None and class_id not in run.class_subset:
                continue
            if not (0.0 <= s <= 1.0):
                raise DomainError(
                    f"run {run.name!r} validation score for {class_id!r} "
                    f"outside [0, 1]: {s}"
                )
            coverage.setdefault(class_id, []).append((run.name, float(s)))

    weights: dict[tuple[str, str], float] = {}
    class_mean: dict[str, float] = {}
    class_top: dict[str, float] = {}
    for class_id, scored in coverage.items():
        values = [s for _, s in scored]
        mu = sum(values) / len(values)
        top = max(values)
        class_mean[class_id] = mu
        class_top[class_id] = top
        for name, s in scored:
            weights[(name, class_id)] = class_weight(s, mu, top, alpha)
    return ClassWeightTable(
        weights=weights, alpha=alpha, class_mean=class_mean, class_top=class_top
    )


def plan_expert_subsets(
    occurrence: Mapping[str, int],
    subset_size: int,
    rare_rank_range: tuple[int, int],
) -> list[list[str]]:
    """Chunk the rarest classes into consecutive expert subsets.

    Classes sort ascending by occurrence count (ties by class id); ranks
    are 1-based and inclusive. The selected rank range is cut into
    consecutive subsets of ``subset_size`` classes; the last may be
    smaller.
    """
    if subset_size < 1:
        raise DomainError(f"subset_size must be >= 1, got {subset_size}")
    lo, hi = rare_rank_range
    n = len(occurrence)
    if not (1 <= lo <= hi <= n):
        raise DomainError(f"rank range [{lo}, {hi}] invalid for {n} classes")
    ranked = sorted(occurrence, key=lambda c: (occurrence[c], c))
    selected = ranked[lo - 1 : hi]
    return [selected[i : i + subset_size] for i in range(0, len(selected), subset_size)]


def fuse_with_provenance(
    runs: Sequence[ModelRun],
    table: ClassWeightTable,
    method: str = "nms",
    iou_threshold: float = 0.5,
    threads: int = 1,
) -> tuple[list[Detection], list[str]]:
    """Weight, concatenate and suppress once; also name each output's source run.

    A merged (NMW) detection is attributed to its cluster head's run.
    """
    weighted: list[Detection] = []
    sources: list[str] = []
    for run in runs:
        for det in run.detections:
            if run.class_subset is not None and det.class_id not in run.class_subset:
                raise SubsetViolationError(
                    f"run {run.name!r} emits {det.class_id!r} outside its class subset"
                )
            w = table.weight(run.name, det.class_id)
            weighted.append(replace(det, score=det.score * w))
            sources.append(run.name)
    fused, origin = _suppress_classwise_indexed(weighted, method, iou_threshold, threads)
    return fused, [sources[i] for i in origin]


def fuse(
    runs: Sequence[ModelRun],
    table: ClassWeightTable,
    method: str = "nms",
    iou_threshold: float = 0.5,
    threads: int = 1,
) -> list[Detection]:
    """Class-weighted ensemble fusion; see :func:`fuse_with_provenance`."""
    fused, _ = fuse_with_provenance(runs, table, method, iou_threshold, threads)
    return fused


# -- manifest ----------------------------------------------------------------


@dataclass(frozen=True)
class EnsembleManifest:
    runs: tuple[ModelRun, ...]
    alpha: float = 0.5
    method: str = "nms"
    iou_threshold: float = 0.5


def load_val_scores(path, hierarchy: ClassHierarchy | None = None) -> dict[str, float]:
    """Load a validation-score CSV (LabelName,AP)."""
    import csv

    out: dict[str, float] = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header][:2] != ["LabelName", "AP"]:
            raise ParseError("expected header 'LabelName,AP'", path=path, line=1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) < 2:
                raise ParseError("expected 2 columns", path=path, line=lineno)
            label = row[0].strip()
            if hierarchy is not None and label not in hierarchy:
                from .errors import UnknownClassError

                raise UnknownClassError(f"{path}:{lineno}: unknown class {label!r}")
            try:
                ap = float(row[1])
            except ValueError:
                raise ParseError(f"AP is not a number: {row[1]!r}", path=path, line=lineno) from None
            if not (0.0 <= ap <= 1.0):
                raise ParseError(f"AP {ap} outside [0, 1]", path=path, line=lineno)
            out[label] = ap
    return out


def load_class_subset(path, hierarchy: ClassHierarchy | None = None) -> frozenset[str]:
    """Load a class-subset CSV (single LabelName column)."""
    import csv

    out = set()
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[0].strip() != "LabelName":
            raise ParseError("expected header 'LabelName'", path=path, line=1)
        for lineno, row in enumerate(reader, start=2):
            if not row or not row[0].strip():
                continue
            label = row[0].strip()
            if hierarchy is not None and label not in hierarchy:
                from .errors import UnknownClassError

                raise UnknownClassError(f"{path}:{lineno}: unknown class {label!r}")
            out.add(label)
    return frozenset(out)


def load_manifest(path, hierarchy: ClassHierarchy | None = None) -> EnsembleManifest:
    """Load an ensemble manifest JSON.

    Shape: ``{"alpha": .., "method": "nms"|"nmw", "iou_threshold": ..,
    "runs": [{"name": .., "detections": path, "val_scores": path,
    "class_subset": path|null}, ..]}``. Relative paths resolve against the
    manifest's directory. Expert detections are filtered to their subset on
    load, so a full model's prediction file can be reused as an expert.
    """
    base = Path(path).parent
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc}", path=path) from None
    if not isinstance(doc, dict) or "runs" not in doc or not doc["runs"]:
        raise ParseError("manifest must declare a non-empty 'runs' list", path=path)

    alpha = float(doc.get("alpha", 0.5))
    _check_alpha(alpha)
    method = doc.get("method", "nms")
    if method not in METHODS:
        raise ParseError(f"method must be one of {METHODS}, got {method!r}", path=path)
    iou_threshold = float(doc.get("iou_threshold", 0.5))

    runs = []
    for i, spec in enumerate(doc["runs"]):
        for key in ("name", "detections", "val_scores"):
            if key not in spec:
                raise ParseError(f"runs[{i}] missing {key!r}", path=path)
        dets = load_detections(base / spec["detections"], hierarchy)
        scores = load_val_scores(base / spec["val_scores"], hierarchy)
        subset = None
        if spec.get("class_subset"):
            subset = load_class_subset(base / spec["class_subset"], hierarchy)
            dets = [d for d in dets if d.class_id in subset]
        runs.append(
            ModelRun(
                name=spec["name"],
                detections=tuple(dets),
                val_scores=scores,
                class_subset=subset,
            )
        )
    return EnsembleManifest(
        runs=tuple(runs), alpha=alpha, method=method, iou_threshold=iou_threshold
    )
