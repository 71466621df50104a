"""Command-line entry point: one binary, one subcommand per pipeline stage.

Exit codes: 0 on success, 1 on usage errors (bad flags, missing arguments),
2 on data errors (unparseable files, unknown classes, domain violations).
Diagnostics go to stderr; data goes to stdout or the requested files.
``DETPIPE_OUTPUT_DIR`` supplies a default for ``--out-dir`` flags.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from .annotations import (
    load_cooccurrence_pairs,
    load_detections,
    load_ground_truth,
    load_occurrence,
    load_proposals,
    load_verifications,
    write_detections,
    write_detections_jsonl,
)
from .assignment import (
    AssignmentConfig,
    SupervisionState,
    assign_targets,
    read_supervision,
    write_supervision,
)
from .ensemble import fuse_with_provenance, build_weight_table, load_manifest, plan_expert_subsets
from .errors import DetPipeError, ParseError
from .evaluation import EvalConfig, evaluate, mean_over_rank_range, write_report
from .hierarchy import load_hierarchy_csv, load_hierarchy_json
from .loss import sigmoid_ce, sigmoid_ce_grad
from .pipeline import generate_synthetic_scene, run_pipeline, write_synthetic_scene
from .suppression import suppress_classwise


class _Parser(argparse.ArgumentParser):
    """argparse with usage failures mapped to exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _load_hierarchy(path):
    if str(path).endswith(".json"):
        return load_hierarchy_json(path)
    return load_hierarchy_csv(path)


def _rank_range(text: str) -> tuple[int, int]:
    try:
        lo, hi = text.split(":")
        return int(lo), int(hi)
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"expected LO:HI with integer ranks, got {text!r}"
        ) from None


def _out_stream(spec):
    return sys.stdout if spec == "-" else open(spec, "w", encoding="utf-8", newline="")


def _close(fh):
    if fh is not sys.stdout:
        fh.close()


def _resolve_out_dir(args) -> Path:
    if args.out_dir:
        return Path(args.out_dir)
    env = os.environ.get("DETPIPE_OUTPUT_DIR")
    if env:
        return Path(env)
    args.parser.error("--out-dir is required (or set DETPIPE_OUTPUT_DIR)")
    raise AssertionError("unreachable")


def _add_eval_flags(sub):
    sub.add_argument("--iou-threshold", type=float, default=0.5,
                     help="match threshold for scoring (default 0.5)")
    sub.add_argument("--expand-gt", action=argparse.BooleanOptionalAction, default=True,
                     help="count each ground truth for its ancestors too (default on)")
    sub.add_argument("--expand-detections", action=argparse.BooleanOptionalAction,
                     default=False,
                     help="duplicate each detection for its ancestors (default off)")
    sub.add_argument("--ignore-group-of", action=argparse.BooleanOptionalAction,
                     default=False,
                     help="drop group boxes and detections matching them (default off)")


def _eval_config(args) -> EvalConfig:
    return EvalConfig(
        iou_threshold=args.iou_threshold,
        expand_gt=args.expand_gt,
        expand_detections=args.expand_detections,
        ignore_group_of=args.ignore_group_of,
    )


# -- subcommands ---------------------------------------------------------------


def _cmd_assign_targets(args) -> int:
    hierarchy = _load_hierarchy(args.hierarchy)
    proposals = load_proposals(args.proposals)
    gts = load_ground_truth(args.gt, hierarchy)
    verifications = load_verifications(args.verifications, hierarchy)
    pairs = load_cooccurrence_pairs(args.pairs, hierarchy) if args.pairs else []
    config = AssignmentConfig(
        pos_iou_threshold=args.pos_iou_threshold,
        containment_threshold=args.containment_threshold,
        unverified_policy=args.unverified_policy,
    )
    gt_by_image: dict[str, list] = {}
    for g in gts:
        gt_by_image.setdefault(g.image_id, []).append(g)
    matrices = [
        assign_targets(
            proposals[image_id],
            gt_by_image.get(image_id, []),
            verifications.get(image_id),
            hierarchy,
            pairs,
            config,
            image_id=image_id,
        )
        for image_id in sorted(proposals)
    ]
    if not matrices:
        raise ParseError("no proposals found", path=args.proposals)
    out = _out_stream(args.out)
    try:
        write_supervision(out, matrices)
    finally:
        _close(out)
    return 0


def _read_logits(path, class_ids):
    """Read a logits CSV (ImageID,ProposalIndex,<one column per class>)."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ParseError("empty file, expected a header row", path=path, line=1)
        header = [h.strip() for h in header]
        if header[:2] != ["ImageID", "ProposalIndex"]:
            raise ParseError(
                "header must start with ImageID,ProposalIndex", path=path, line=1
            )
        cols = header[2:]
        if set(cols) != set(class_ids):
            raise ParseError(
                "logit columns do not match the supervision file's classes",
                path=path,
                line=1,
            )
        col_order = [cols.index(c) for c in class_ids]
        per_image: dict[str, list[tuple[int, list[float]]]] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2 + len(cols):
                raise ParseError(
                    f"expected {2 + len(cols)} columns, got {len(row)}",
                    path=path,
                    line=lineno,
                )
            try:
                idx = int(row[1])
                values = [float(row[2 + j]) for j in col_order]
            except ValueError as exc:
                raise ParseError(f"bad number: {exc}", path=path, line=lineno) from None
            per_image.setdefault(row[0], []).append((idx, values))
    out = {}
    for image_id, rows in per_image.items():
        rows.sort(key=lambda t: t[0])
        if [i for i, _ in rows] != list(range(len(rows))):
            raise ParseError(
                f"ProposalIndex for image {image_id!r} must be 0..n-1", path=path
            )
        out[image_id] = np.asarray([v for _, v in rows], dtype=np.float64)
    return out


def _cmd_loss(args) -> int:
    matrices = read_supervision(args.supervision)
    by_image = {m.image_id: m for m in matrices}
    logits = _read_logits(args.logits, matrices[0].class_ids)
    missing = sorted(set(by_image) - set(logits))
    if missing:
        raise ParseError(f"no logits for images {missing}", path=args.logits)
    extra = sorted(set(logits) - set(by_image))
    if extra:
        raise ParseError(f"logits for unknown images {extra}", path=args.logits)

    total = 0.0
    count = 0
    grads = {}
    for image_id in sorted(by_image):
        m = by_image[image_id]
        z = logits[image_id]
        image_total, _ = sigmoid_ce(z, m)
        total += image_total
        count += int(np.count_nonzero(m.states != int(SupervisionState.IGNORE)))
        if args.grad_out:
            grads[image_id] = sigmoid_ce_grad(z, m)

    value = total / max(count, 1) if args.normalize else total
    if args.grad_out:
        scale = 1.0 / max(count, 1) if args.normalize else 1.0
        with open(args.grad_out, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["ImageID", "ProposalIndex", *matrices[0].class_ids])
            for image_id in sorted(grads):
                for p, row in enumerate(grads[image_id] * scale):
                    writer.writerow([image_id, p, *(repr(float(v)) for v in row)])
    print(
        json.dumps(
            {
                "total_loss": value,
                "supervised_entries": count,
                "num_images": len(by_image),
                "normalized": bool(args.normalize),
            },
            sort_keys=True,
        )
    )
    return 0


def _cmd_suppress(args) -> int:
    source = sys.stdin if args.infile == "-" else args.infile
    fmt = args.format
    if fmt is None:
        fmt = "jsonl" if str(args.infile).endswith((".jsonl", ".json")) else "csv"
    dets = load_detections(source, fmt=fmt)
    kept = suppress_classwise(dets, args.method, args.iou_threshold, args.threads)
    out = _out_stream(args.out)
    try:
        if fmt == "jsonl":
            write_detections_jsonl(out, kept)
        else:
            write_detections(out, kept)
    finally:
        _close(out)
    return 0


def _cmd_ensemble(args) -> int:
    hierarchy = _load_hierarchy(args.hierarchy) if args.hierarchy else None
    manifest = load_manifest(args.manifest, hierarchy)
    table = build_weight_table(manifest.runs, manifest.alpha)
    fused, sources = fuse_with_provenance(
        manifest.runs,
        table,
        method=manifest.method,
        iou_threshold=manifest.iou_threshold,
        threads=args.threads,
    )
    out = _out_stream(args.out)
    try:
        write_detections(out, fused, sources=sources if args.provenance else None)
    finally:
        _close(out)
    return 0


def _cmd_evaluate(args) -> int:
    if args.rank_ranges and not args.occurrence:
        args.parser.error("--rank-ranges requires --occurrence")
    hierarchy = _load_hierarchy(args.hierarchy)
    gts = load_ground_truth(args.gt, hierarchy)
    verifications = load_verifications(args.verifications, hierarchy)
    dets = load_detections(args.detections, hierarchy)
    mean_ap, reports = evaluate(
        dets, gts, verifications, hierarchy, _eval_config(args), threads=args.threads
    )
    out = _out_stream(args.out)
    try:
        write_report(out, reports)
    finally:
        _close(out)
    summary = sys.stderr if args.out == "-" else sys.stdout
    print(f"mAP {mean_ap!r}", file=summary)
    if args.rank_ranges:
        occurrence = load_occurrence(args.occurrence, hierarchy)
        for lo, hi in args.rank_ranges:
            value = mean_over_rank_range(reports, occurrence, lo, hi)
            print(f"mean_ap[{lo}:{hi}] {value!r}", file=summary)
    return 0


def _cmd_plan_experts(args) -> int:
    occurrence = load_occurrence(args.occurrence)
    subsets = plan_expert_subsets(occurrence, args.subset_size, args.rank_range)
    out = _out_stream(args.out)
    try:
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["SubsetIndex", "LabelName"])
        for i, subset in enumerate(subsets):
            for label in subset:
                writer.writerow([i, label])
    finally:
        _close(out)
    return 0


def _cmd_pipeline(args) -> int:
    out_dir = _resolve_out_dir(args)
    hierarchy = _load_hierarchy(args.hierarchy)
    manifest = load_manifest(args.manifest, hierarchy)
    gts = load_ground_truth(args.gt, hierarchy)
    verifications = load_verifications(args.verifications, hierarchy)
    result = run_pipeline(
        manifest,
        gts,
        verifications,
        hierarchy,
        _eval_config(args),
        output_dir=out_dir,
        threads=args.threads,
    )
    print((out_dir / "summary.json").read_text(encoding="utf-8"), end="")
    del result
    return 0


def _cmd_synth(args) -> int:
    out_dir = _resolve_out_dir(args)
    scene = generate_synthetic_scene(
        seed=args.seed,
        num_images=args.num_images,
        num_classes=args.num_classes,
        hierarchy_depth=args.hierarchy_depth,
        sparsity=args.sparsity,
        num_models=args.num_models,
    )
    manifest_path = write_synthetic_scene(
        scene,
        out_dir,
        method=args.method,
        alpha=args.alpha,
        iou_threshold=args.iou_threshold,
    )
    print(manifest_path)
    return 0


# -- parser ----------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="detpipe", description=__doc__.splitlines()[0])
    subs = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sub):
        sub.set_defaults(parser=sub)
        sub.add_argument("--threads", type=int, default=1,
                         help="worker threads for per-group stages (default 1)")

    sub = subs.add_parser("assign-targets",
                          help="compute per-proposal training targets")
    common(sub)
    sub.add_argument("--proposals", required=True, help="proposal boxes CSV")
    sub.add_argument("--gt", required=True, help="ground truth CSV")
    sub.add_argument("--verifications", required=True, help="verification CSV")
    sub.add_argument("--hierarchy", required=True, help="hierarchy JSON or CSV")
    sub.add_argument("--pairs", help="co-occurrence pairs CSV")
    sub.add_argument("--pos-iou-threshold", type=float, default=0.5)
    sub.add_argument("--containment-threshold", type=float, default=0.9)
    sub.add_argument("--unverified-policy", choices=("negative", "ignore"),
                     default="negative")
    sub.add_argument("--out", default="-", help="output JSON-lines path (default stdout)")
    sub.set_defaults(func=_cmd_assign_targets, parser=sub)

    sub = subs.add_parser("loss", help="masked sigmoid cross-entropy over logits")
    common(sub)
    sub.add_argument("--logits", required=True,
                     help="CSV: ImageID,ProposalIndex,<one column per class>")
    sub.add_argument("--supervision", required=True,
                     help="JSON-lines from assign-targets")
    sub.add_argument("--normalize", action="store_true",
                     help="divide by the supervised-entry count")
    sub.add_argument("--grad-out", help="write per-entry gradients to this CSV")
    sub.set_defaults(func=_cmd_loss, parser=sub)

    sub = subs.add_parser("suppress", help="NMS or NMW duplicate suppression")
    common(sub)
    sub.add_argument("--method", choices=("nms", "nmw"), default="nms")
    sub.add_argument("--iou-threshold", type=float, default=0.5)
    sub.add_argument("--format", choices=("csv", "jsonl"),
                     help="detections format (default csv; inferred from --in suffix)")
    sub.add_argument("--in", dest="infile", default="-",
                     help="input detections (default stdin)")
    sub.add_argument("--out", default="-", help="output detections (default stdout)")
    sub.set_defaults(func=_cmd_suppress, parser=sub)

    sub = subs.add_parser("ensemble", help="fuse multiple runs per a manifest")
    common(sub)
    sub.add_argument("--manifest", required=True, help="ensemble manifest JSON")
    sub.add_argument("--hierarchy", help="hierarchy JSON or CSV for class validation")
    sub.add_argument("--provenance", action="store_true",
                     help="append a SourceRun column")
    sub.add_argument("--out", default="-", help="fused detections CSV (default stdout)")
    sub.set_defaults(func=_cmd_ensemble, parser=sub)

    sub = subs.add_parser("evaluate", help="per-class AP and mAP report")
    common(sub)
    sub.add_argument("--detections", required=True)
    sub.add_argument("--gt", required=True)
    sub.add_argument("--verifications", required=True)
    sub.add_argument("--hierarchy", required=True)
    _add_eval_flags(sub)
    sub.add_argument("--occurrence", help="occurrence counts CSV (LabelName,Count)")
    sub.add_argument("--rank-ranges", type=_rank_range, nargs="+", metavar="LO:HI",
                     help="also print mean AP over occurrence-rank ranges")
    sub.add_argument("--out", default="-", help="report CSV (default stdout; the mAP "
                     "summary then goes to stderr instead of stdout)")
    sub.set_defaults(func=_cmd_evaluate, parser=sub)

    sub = subs.add_parser("plan-experts", help="chunk rare classes into expert subsets")
    common(sub)
    sub.add_argument("--occurrence", required=True,
                     help="occurrence counts CSV (LabelName,Count)")
    sub.add_argument("--subset-size", type=int, required=True)
    sub.add_argument("--rank-range", type=_rank_range, required=True, metavar="LO:HI",
                     help="1-based inclusive rarity rank range, e.g. 1:250")
    sub.add_argument("--out", default="-", help="subset CSV (default stdout)")
    sub.set_defaults(func=_cmd_plan_experts, parser=sub)

    sub = subs.add_parser("pipeline", help="fuse per a manifest, evaluate, write artifacts")
    common(sub)
    sub.add_argument("--manifest", required=True)
    sub.add_argument("--gt", required=True)
    sub.add_argument("--verifications", required=True)
    sub.add_argument("--hierarchy", required=True)
    _add_eval_flags(sub)
    sub.add_argument("--out-dir", help="artifact directory (or DETPIPE_OUTPUT_DIR)")
    sub.set_defaults(func=_cmd_pipeline, parser=sub)

    sub = subs.add_parser("synth", help="generate a synthetic scene plus manifest")
    common(sub)
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--num-images", type=int, default=40)
    sub.add_argument("--num-classes", type=int, default=12)
    sub.add_argument("--hierarchy-depth", type=int, default=3)
    sub.add_argument("--sparsity", type=float, default=0.5)
    sub.add_argument("--num-models", type=int, default=2)
    sub.add_argument("--method", choices=("nms", "nmw"), default="nms")
    sub.add_argument("--alpha", type=float, default=0.5)
    sub.add_argument("--iou-threshold", type=float, default=0.5)
    sub.add_argument("--out-dir", help="scene directory (or DETPIPE_OUTPUT_DIR)")
    sub.set_defaults(func=_cmd_synth, parser=sub)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except SystemExit as exc:
        return int(exc.code or 0)
    except (DetPipeError, OSError, ValueError) as exc:
        print(f"detpipe: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
