"""Detection post-processing toolkit: duplicate suppression, hierarchy-aware
target assignment, masked sigmoid loss, class-weighted ensemble fusion, and
sparsely verified AP evaluation, with a CLI over every stage."""

from .annotations import (
    CooccurrencePair,
    Detection,
    GroundTruthBox,
    ImageVerification,
    group_by_image,
    load_cooccurrence_pairs,
    load_detections,
    load_ground_truth,
    load_occurrence,
    load_proposals,
    load_verifications,
    write_detections,
    write_detections_jsonl,
    write_ground_truth,
    write_proposals,
    write_verifications,
)
from .assignment import (
    AssignmentConfig,
    Provenance,
    SupervisionMatrix,
    SupervisionState,
    assign_targets,
    cooccurrence_ignore_mask,
    read_supervision,
    write_supervision,
)
from .ensemble import (
    ClassWeightTable,
    EnsembleManifest,
    ModelRun,
    build_weight_table,
    class_weight,
    fuse,
    fuse_with_provenance,
    load_manifest,
    plan_expert_subsets,
)
from .errors import (
    ConflictError,
    CycleError,
    DetPipeError,
    DomainError,
    EmptyProposalError,
    MissingScoreError,
    MissingWeightError,
    MixedGroupError,
    NonFiniteLogitError,
    ParseError,
    SelfPairError,
    ShapeMismatchError,
    SubsetViolationError,
    UnknownClassError,
)
from .evaluation import (
    ClassAPReport,
    EvalConfig,
    average_precision,
    evaluate,
    mean_over_rank_range,
    read_report,
    write_report,
)
from .geometry import (
    BBox,
    area,
    containment_fraction,
    containment_matrix,
    iou,
    iou_matrix,
)
from .hierarchy import (
    ClassHierarchy,
    build_hierarchy,
    load_hierarchy_csv,
    load_hierarchy_json,
)
from .loss import sigmoid_ce, sigmoid_ce_grad
from .pipeline import (
    PipelineResult,
    SyntheticScene,
    generate_synthetic_scene,
    manifest_digest,
    run_pipeline,
    write_synthetic_scene,
)
from .suppression import nms, nmw, suppress_classwise
from ._kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"

__all__ = [
    "AssignmentConfig",
    "BBox",
    "ClassAPReport",
    "ClassHierarchy",
    "ClassWeightTable",
    "ConflictError",
    "CooccurrencePair",
    "CycleError",
    "Detection",
    "DetPipeError",
    "DomainError",
    "EmptyProposalError",
    "EnsembleManifest",
    "EvalConfig",
    "GroundTruthBox",
    "ImageVerification",
    "KERNEL_BACKEND",
    "MissingScoreError",
    "MissingWeightError",
    "MixedGroupError",
    "ModelRun",
    "NonFiniteLogitError",
    "ParseError",
    "PipelineResult",
    "Provenance",
    "SelfPairError",
    "ShapeMismatchError",
    "SubsetViolationError",
    "SupervisionMatrix",
    "SupervisionState",
    "SyntheticScene",
    "UnknownClassError",
    "area",
    "assign_targets",
    "average_precision",
    "build_hierarchy",
    "build_weight_table",
    "class_weight",
    "containment_fraction",
    "containment_matrix",
    "cooccurrence_ignore_mask",
    "evaluate",
    "fuse",
    "fuse_with_provenance",
    "generate_synthetic_scene",
    "group_by_image",
    "iou",
    "iou_matrix",
    "load_cooccurrence_pairs",
    "load_detections",
    "load_ground_truth",
    "load_hierarchy_csv",
    "load_hierarchy_json",
    "load_manifest",
    "load_occurrence",
    "load_proposals",
    "load_verifications",
    "manifest_digest",
    "mean_over_rank_range",
    "nms",
    "nmw",
    "plan_expert_subsets",
    "read_report",
    "read_supervision",
    "run_pipeline",
    "sigmoid_ce",
    "sigmoid_ce_grad",
    "suppress_classwise",
    "write_detections",
    "write_detections_jsonl",
    "write_ground_truth",
    "write_proposals",
    "write_report",
    "write_supervision",
    "write_synthetic_scene",
    "write_verifications",
]
