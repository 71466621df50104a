"""End-to-end orchestration: weight runs, fuse once, evaluate, write artifacts.

Also provides a seeded synthetic-scene generator so the whole pipeline can
be exercised at desk scale with known ground truth.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .annotations import (
    Detection,
    GroundTruthBox,
    ImageVerification,
    write_detections,
    write_ground_truth,
    write_proposals,
    write_verifications,
)
from .ensemble import (
    EnsembleManifest,
    ModelRun,
    build_weight_table,
    fuse_with_provenance,
)
from .errors import DomainError
from .evaluation import ClassAPReport, EvalConfig, evaluate, write_report
from .geometry import BBox
from .hierarchy import ClassHierarchy, build_hierarchy


@dataclass(frozen=True)
class PipelineResult:
    fused: tuple[Detection, ...]
    sources: tuple[str, ...]
    mean_ap: float
    reports: tuple[ClassAPReport, ...]


def _run_digest(run: ModelRun) -> str:
    h = hashlib.sha256()
    for d in run.detections:
        h.update(
            f"{d.image_id},{d.class_id},{d.score!r},{d.box.as_tuple()!r}\n".encode()
        )
    return h.hexdigest()


def manifest_digest(manifest: EnsembleManifest) -> str:
    """Stable content hash of a manifest, including its detections."""
    doc = {
        "alpha": repr(manifest.alpha),
        "method": manifest.method,
        "iou_threshold": repr(manifest.iou_threshold),
        "runs": [
            {
                "name": r.name,
                "detections_sha256": _run_digest(r),
                "val_scores": {c: repr(s) for c, s in sorted(r.val_scores.items())},
                "class_subset": sorted(r.class_subset) if r.class_subset else None,
            }
            for r in manifest.runs
        ],
    }
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def run_pipeline(
    manifest: EnsembleManifest,
    gts: Sequence[GroundTruthBox],
    verifications: Mapping[str, ImageVerification],
    hierarchy: ClassHierarchy,
    eval_config: EvalConfig = EvalConfig(),
    output_dir=None,
    threads: int = 1,
) -> PipelineResult:
    """Fuse the manifest's runs, evaluate the result, optionally write artifacts.

    The output directory receives fused.csv (with a SourceRun provenance
    column), report.csv, summary.json and manifest.lock. Identical inputs
    produce byte-identical artifacts.
    """
    table = build_weight_table(manifest.runs, manifest.alpha)
    fused, sources = fuse_with_provenance(
        manifest.runs,
        table,
        method=manifest.method,
        iou_threshold=manifest.iou_threshold,
        threads=threads,
    )
    mean_ap, reports = evaluate(
        fused, gts, verifications, hierarchy, eval_config, threads=threads
    )
    result = PipelineResult(
        fused=tuple(fused),
        sources=tuple(sources),
        mean_ap=mean_ap,
        reports=tuple(reports),
    )
    if output_dir is not None:
        out = Path(output_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_detections(out / "fused.csv", fused, sources=sources)
        write_report(out / "report.csv", reports)
        defined = [r for r in reports if r.num_gt > 0]
        summary = {
            "mean_ap": mean_ap,
            "num_classes": len(reports),
            "num_classes_with_gt": len(defined),
            "num_fused_detections": len(fused),
            "method": manifest.method,
            "alpha": manifest.alpha,
            "iou_threshold": manifest.iou_threshold,
            "runs": [r.name for r in manifest.runs],
        }
        (out / "summary.json").write_text(
            json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        lock = {
            "manifest_sha256": manifest_digest(manifest),
            "run_sha256": {r.name: _run_digest(r) for r in manifest.runs},
        }
        (out / "manifest.lock").write_text(
            json.dumps(lock, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
    return result


# -- synthetic scenes ---------------------------------------------------------


@dataclass(frozen=True)
class SyntheticScene:
    """A generated dataset plus per-model detections and validation scores."""

    hierarchy: ClassHierarchy
    gts: tuple[GroundTruthBox, ...]
    verifications: Mapping[str, ImageVerification]
    model_detections: Mapping[str, tuple[Detection, ...]]
    model_val_scores: Mapping[str, Mapping[str, float]]


def _jittered_box(box: BBox, rng: np.random.Generator) -> BBox:
    cx = (box.x_min + box.x_max) / 2 + rng.uniform(-0.02, 0.02)
    cy = (box.y_min + box.y_max) / 2 + rng.uniform(-0.02, 0.02)
    w = box.width * rng.uniform(0.85, 1.15)
    h = box.height * rng.uniform(0.85, 1.15)
    x0 = min(max(cx - w / 2, 0.0), 1.0)
    y0 = min(max(cy - h / 2, 0.0), 1.0)
    x1 = min(max(cx + w / 2, x0), 1.0)
    y1 = min(max(cy + h / 2, y0), 1.0)
    return BBox(x0, y0, x1, y1)


def _random_box(rng: np.random.Generator) -> BBox:
    x0 = rng.uniform(0.0, 0.75)
    y0 = rng.uniform(0.0, 0.75)
    return BBox(x0, y0, x0 + rng.uniform(0.05, 0.25), y0 + rng.uniform(0.05, 0.25))


def generate_synthetic_scene(
    seed: int,
    num_images: int,
    num_classes: int,
    hierarchy_depth: int,
    sparsity: float,
    num_models: int = 2,
) -> SyntheticScene:
    """Generate a reproducible scene with known ground truth.

    Classes form a random tree of the requested depth. Each image gets a
    few ground-truth boxes; every class that has a box in an image is
    verified positive there (together with its ancestors), so annotations
    never contradict verifications. Of the remaining classes, a
    ``1 - sparsity`` fraction is verified negative and the rest stay
    unverified. Each model emits a jittered detection for most ground
    truths plus a few false positives, and its per-class validation score
    is its actual AP on the generated data (0 where undefined).
    """
    if num_images < 1 or num_classes < 1 or hierarchy_depth < 1 or num_models < 1:
        raise DomainError("num_images, num_classes, hierarchy_depth and num_models must be >= 1")
    if not (0.0 <= sparsity <= 1.0):
        raise DomainError(f"sparsity must lie in [0, 1], got {sparsity}")

    rng = np.random.default_rng(seed)
    width = max(2, len(str(num_classes - 1)))
    classes = [f"c{i:0{width}d}" for i in range(num_classes)]
    depth = min(hierarchy_depth, num_classes)
    level = [i % depth for i in range(num_classes)]
    by_level: dict[int, list[str]] = {}
    for name, lv in zip(classes, level):
        by_level.setdefault(lv, []).append(name)
    edges = []
    for name, lv in zip(classes, level):
        if lv > 0:
            parent = by_level[lv - 1][int(rng.integers(len(by_level[lv - 1])))]
            edges.append((parent, name))
    hierarchy = build_hierarchy(classes, edges)

    img_width = max(3, len(str(num_images - 1)))
    image_ids = [f"img{i:0{img_width}d}" for i in range(num_images)]

    gts: list[GroundTruthBox] = []
    verifications: dict[str, ImageVerification] = {}
    gt_by_image: dict[str, list[GroundTruthBox]] = {}
    for image_id in image_ids:
        rows = []
        for _ in range(int(rng.integers(0, 4))):
            class_id = classes[int(rng.integers(num_classes))]
            rows.append(
                GroundTruthBox(
                    image_id=image_id,
                    class_id=class_id,
                    box=_random_box(rng),
                    is_group_of=bool(rng.random() < 0.05),
                )
            )
        gt_by_image[image_id] = rows
        gts.extend(rows)

        positive: set[str] = set()
        for g in rows:
            positive.add(g.class_id)
            positive.update(hierarchy.ancestors(g.class_id))
        negative = {
            c
            for c in classes
            if c not in positive and float(rng.random()) >= sparsity
        }
        verifications[image_id] = ImageVerification(
            image_id=image_id,
            verified_positive=frozenset(positive),
            verified_negative=frozenset(negative),
        )

    model_detections: dict[str, tuple[Detection, ...]] = {}
    model_val_scores: dict[str, dict[str, float]] = {}
    for m in range(num_models):
        name = f"model_{chr(ord('a') + m)}" if m < 26 else f"model_{m}"
        dets: list[Detection] = []
        for image_id in image_ids:
            for g in gt_by_image[image_id]:
                if rng.random() < 0.8:
                    dets.append(
                        Detection(
                            image_id=image_id,
                            class_id=g.class_id,
                            score=float(rng.uniform(0.5, 1.0)),
                            box=_jittered_box(g.box, rng),
                        )
                    )
            for _ in range(int(rng.integers(0, 3))):
                dets.append(
                    Detection(
                        image_id=image_id,
                        class_id=classes[int(rng.integers(num_classes))],
                        score=float(rng.uniform(0.05, 0.6)),
                        box=_random_box(rng),
                    )
                )
        _, reports = evaluate(dets, gts, verifications, hierarchy)
        scores = {r.class_id: (r.ap if r.ap is not None else 0.0) for r in reports}
        model_detections[name] = tuple(dets)
        model_val_scores[name] = scores

    return SyntheticScene(
        hierarchy=hierarchy,
        gts=tuple(gts),
        verifications=verifications,
        model_detections=model_detections,
        model_val_scores=model_val_scores,
    )


def write_synthetic_scene(
    scene: SyntheticScene,
    out_dir,
    method: str = "nms",
    alpha: float = 0.5,
    iou_threshold: float = 0.5,
) -> Path:
    """Write a scene as loadable files plus an ensemble manifest; returns the manifest path."""
    out = Path(out_dir)
    (out / "runs").mkdir(parents=True, exist_ok=True)
    (out / "val_scores").mkdir(parents=True, exist_ok=True)

    lines = ["LabelName,ParentLabelName"]
    for c in scene.hierarchy.classes:
        parents = scene.hierarchy.parents(c)
        if parents:
            lines.extend(f"{c},{p}" for p in sorted(parents))
        else:
            lines.append(f"{c},")
    (out / "hierarchy.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")

    write_ground_truth(out / "ground_truth.csv", scene.gts)
    write_verifications(out / "verifications.csv", scene.verifications)

    first = next(iter(scene.model_detections))
    proposals: dict[str, list] = {}
    for d in scene.model_detections[first]:
        proposals.setdefault(d.image_id, []).append(d.box)
    write_proposals(out / "proposals.csv", proposals)

    runs = []
    for name, dets in scene.model_detections.items():
        write_detections(out / "runs" / f"{name}.csv", dets)
        score_lines = ["LabelName,AP"]
        score_lines.extend(
            f"{c},{s!r}" for c, s in sorted(scene.model_val_scores[name].items())
        )
        (out / "val_scores" / f"{name}.csv").write_text(
            "\n".join(score_lines) + "\n", encoding="utf-8"
        )
        runs.append(
            {
                "name": name,
                "detections": f"runs/{name}.csv",
                "val_scores": f"val_scores/{name}.csv",
                "class_subset": None,
            }
        )
    manifest = {
        "alpha": alpha,
        "method": method,
        "iou_threshold": iou_threshold,
        "runs": runs,
    }
    manifest_path = out / "manifest.json"
    manifest_path.write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return manifest_path
