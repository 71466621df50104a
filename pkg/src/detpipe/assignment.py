"""Per-(proposal, class) supervision targets under sparse verification.

For every proposal box and every class the assignment decides one of
Positive / Negative / Ignore, applying these rules in priority order
(highest wins):

1. Positive when the proposal matches a ground truth (IoU at or above
   ``pos_iou_threshold``) and the class is the gt class or one of its
   ancestors.
2. Ignore for descendants of a matched gt's class (a non-leaf gt gives no
   signal about which subclass it is).
3. Ignore for part classes of a subject gt the proposal sits inside
   (containment fraction at or above ``containment_threshold``), per the
   configured co-occurrence pairs.
4. Unverified classes fall to the configured policy (treat as negative, or
   ignore).
5. Negative otherwise.

Every entry also carries a provenance code naming the rule that decided it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Iterable, Sequence, TextIO

import numpy as np

from .annotations import CooccurrencePair, GroundTruthBox, ImageVerification
from .errors import DomainError, EmptyProposalError, ParseError
from .geometry import BBox, boxes_to_array, containment_matrix, iou_matrix
from .hierarchy import ClassHierarchy


class SupervisionState(IntEnum):
    NEGATIVE = 0
    POSITIVE = 1
    IGNORE = 2


class Provenance(IntEnum):
    DEFAULT = 0
    MATCHED = 1
    ANCESTOR_OF_MATCH = 2
    DESCENDANT_SKIP = 3
    COOCCURRENCE_IGNORE = 4
    UNVERIFIED_POLICY = 5


_STATE_NAMES = {s: s.name.lower() for s in SupervisionState}
_STATE_BY_NAME = {v: k for k, v in _STATE_NAMES.items()}
_PROV_NAMES = {p: p.name.lower() for p in Provenance}
_PROV_BY_NAME = {v: k for k, v in _PROV_NAMES.items()}

UNVERIFIED_POLICIES = ("negative", "ignore")


@dataclass(frozen=True)
class AssignmentConfig:
    pos_iou_threshold: float = 0.5
    containment_threshold: float = 0.9
    unverified_policy: str = "negative"

    def __post_init__(self):
        for name in ("pos_iou_threshold", "containment_threshold"):
            v = getattr(self, name)
            if not (0.0 < v <= 1.0):
                raise DomainError(f"{name} must lie in (0, 1], got {v}")
        if self.unverified_policy not in UNVERIFIED_POLICIES:
            raise DomainError(
                f"unverified_policy must be one of {UNVERIFIED_POLICIES}, "
                f"got {self.unverified_policy!r}"
            )


@dataclass
class SupervisionMatrix:
    """Dense per-(proposal, class) states with per-entry provenance.

    ``states`` and ``provenance`` are int8 arrays of shape
    (num_proposals, num_classes), frozen after construction.
    """

    image_id: str
    proposals: tuple[BBox, ...]
    class_ids: tuple[str, ...]
    states: np.ndarray
    provenance: np.ndarray

    def __post_init__(self):
        self.proposals = tuple(self.proposals)
        self.class_ids = tuple(self.class_ids)
        expected = (len(self.proposals), len(self.class_ids))
        if self.states.shape != expected or self.provenance.shape != expected:
            raise ValueError(
                f"states/provenance shape must be {expected}, got "
                f"{self.states.shape} / {self.provenance.shape}"
            )
        self.states.flags.writeable = False
        self.provenance.flags.writeable = False

    @property
    def num_proposals(self) -> int:
        return len(self.proposals)

    @property
    def num_classes(self) -> int:
        return len(self.class_ids)

    def state(self, proposal: int, class_id: str) -> SupervisionState:
        return SupervisionState(self.states[proposal, self.class_ids.index(class_id)])

    def why(self, proposal: int, class_id: str) -> Provenance:
        return Provenance(self.provenance[proposal, self.class_ids.index(class_id)])


def _pairs_by_subject(
    pairs: Iterable[CooccurrencePair], hierarchy: ClassHierarchy
) -> dict[int, list[int]]:
    out: dict[int, list[int]] = {}
    for pair in pairs:
        si = hierarchy.index(pair.subject)
        pi = hierarchy.index(pair.part)
        out.setdefault(si, []).append(pi)
    return out


def cooccurrence_ignore_mask(
    proposals: Sequence[BBox],
    gts: Sequence[GroundTruthBox],
    pairs: Iterable[CooccurrencePair],
    hierarchy: ClassHierarchy,
    config: AssignmentConfig = AssignmentConfig(),
) -> np.ndarray:
    """Boolean (num_proposals, num_classes) matrix of raw rule-3 hits.

    An entry is True when some gt box contains the proposal (containment at
    or above the threshold) and (gt class, entry class) is a configured
    pair. Exposed on its own so the effect of the pair table can be
    inspected or ablated independently of the other rules.
    """
    if not proposals:
        raise EmptyProposalError("no proposals given")
    n_prop = len(proposals)
    n_cls = hierarchy.num_classes
    mask = np.zeros((n_prop, n_cls), dtype=bool)
    subject_parts = _pairs_by_subject(pairs, hierarchy)
    if not gts or not subject_parts:
        return mask
    contain = containment_matrix(
        boxes_to_array(proposals), boxes_to_array(g.box for g in gts)
    )
    for gi, gt in enumerate(gts):
        parts = subject_parts.get(hierarchy.index(gt.class_id))
        if not parts:
            continue
        inside = contain[:, gi] >= config.containment_threshold
        if inside.any():
            mask[np.ix_(inside, parts)] = True
    return mask


def assign_targets(
    proposals: Sequence[BBox],
    gts: Sequence[GroundTruthBox],
    verification: ImageVerification | None,
    hierarchy: ClassHierarchy,
    pairs: Iterable[CooccurrencePair] = (),
    config: AssignmentConfig = AssignmentConfig(),
    image_id: str | None = None,
) -> SupervisionMatrix:
    """Assign a supervision state to every (proposal, class) entry.

    ``verification`` may be None for an image with no verification rows
    (every class is then unverified). All gt classes must resolve against
    the hierarchy. ``image_id`` is normally inferred from the inputs; pass
    it explicitly for an image with neither gts nor verification rows.
    """
    if not proposals:
        raise EmptyProposalError("no proposals given")
    n_prop = len(proposals)
    n_cls = hierarchy.num_classes
    if verification is not None:
        for label in verification.verified_positive | verification.verified_negative:
            hierarchy.index(label)  # raises UnknownClassError
    for gt in gts:
        hierarchy.index(gt.class_id)
    if image_id is None:
        image_id = verification.image_id if verification is not None else ""
        if gts:
            image_id = gts[0].image_id

    states = np.full((n_prop, n_cls), int(SupervisionState.NEGATIVE), dtype=np.int8)
    prov = np.full((n_prop, n_cls), int(Provenance.DEFAULT), dtype=np.int8)

    # rule 4 (lowest priority applied first; later rules overwrite)
    if config.unverified_policy == "ignore":
        verified: set[str] = set()
        if verification is not None:
            verified = set(verification.verified_positive) | set(verification.verified_negative)
        unverified_cols = [i for i, c in enumerate(hierarchy.classes) if c not in verified]
        if unverified_cols:
            states[:, unverified_cols] = int(SupervisionState.IGNORE)
            prov[:, unverified_cols] = int(Provenance.UNVERIFIED_POLICY)

    # rule 3
    cooc = cooccurrence_ignore_mask(proposals, gts, pairs, hierarchy, config)
    states[cooc] = int(SupervisionState.IGNORE)
    prov[cooc] = int(Provenance.COOCCURRENCE_IGNORE)

    if gts:
        ious = iou_matrix(boxes_to_array(proposals), boxes_to_array(g.box for g in gts))
        matched = ious >= config.pos_iou_threshold  # (n_prop, n_gts)

        desc_mask = np.zeros((n_prop, n_cls), dtype=bool)
        exact_mask = np.zeros((n_prop, n_cls), dtype=bool)
        expand_mask = np.zeros((n_prop, n_cls), dtype=bool)
        for gi, gt in enumerate(gts):
            rows = matched[:, gi]
            if not rows.any():
                continue
            ci = hierarchy.index(gt.class_id)
            desc = sorted(hierarchy.descendant_indices(ci))
            if desc:
                desc_mask[np.ix_(rows, desc)] = True
            exact_mask[rows, ci] = True
            expand_mask[np.ix_(rows, sorted(hierarchy.expand_indices(ci)))] = True

        # rule 2
        states[desc_mask] = int(SupervisionState.IGNORE)
        prov[desc_mask] = int(Provenance.DESCENDANT_SKIP)
        # rule 1 (highest priority, wins over everything)
        states[expand_mask] = int(SupervisionState.POSITIVE)
        prov[expand_mask] = int(Provenance.ANCESTOR_OF_MATCH)
        prov[exact_mask] = int(Provenance.MATCHED)

    return SupervisionMatrix(
        image_id=image_id,
        proposals=tuple(proposals),
        class_ids=hierarchy.classes,
        states=states,
        provenance=prov,
    )


# -- JSON-lines interchange --------------------------------------------------


def write_supervision(target, matrices: Sequence[SupervisionMatrix]) -> None:
    """Write supervision matrices as JSON-lines.

    First line is a header record with the class order; each following line
    is one proposal with its per-class state and provenance arrays.
    """
    if not matrices:
        raise ValueError("nothing to write")
    class_ids = matrices[0].class_ids
    for m in matrices:
        if m.class_ids != class_ids:
            raise ValueError("matrices disagree on class order")

    def _write(fh: TextIO):
        fh.write(json.dumps({"classes": list(class_ids)}) + "\n")
        for m in matrices:
            for p, box in enumerate(m.proposals):
                fh.write(
                    json.dumps(
                        {
                            "image_id": m.image_id,
                            "box": list(box.as_tuple()),
                            "states": [
                                _STATE_NAMES[SupervisionState(s)] for s in m.states[p]
                            ],
                            "provenance": [
                                _PROV_NAMES[Provenance(v)] for v in m.provenance[p]
                            ],
                        }
                    )
                    + "\n"
                )

    if hasattr(target, "write"):
        _write(target)
    else:
        with open(target, "w", encoding="utf-8") as fh:
            _write(fh)


def read_supervision(path) -> list[SupervisionMatrix]:
    """Read JSON-lines supervision back into one matrix per image."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [line for line in (raw.strip() for raw in fh) if line]
    if not lines:
        raise ParseError("empty supervision file", path=path, line=1)
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc}", path=path, line=1) from None
    if "classes" not in header:
        raise ParseError("first line must be a header with 'classes'", path=path, line=1)
    class_ids = tuple(header["classes"])

    per_image: dict[str, dict[str, list]] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc}", path=path, line=lineno) from None
        try:
            image_id = rec["image_id"]
            box = BBox(*map(float, rec["box"]))
            states = [_STATE_BY_NAME[s] for s in rec["states"]]
            provenance = [_PROV_BY_NAME[v] for v in rec["provenance"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"malformed record: {exc}", path=path, line=lineno) from None
        if len(states) != len(class_ids) or len(provenance) != len(class_ids):
            raise ParseError("state/provenance arity mismatch", path=path, line=lineno)
        bucket = per_image.setdefault(image_id, {"boxes": [], "states": [], "prov": []})
        bucket["boxes"].append(box)
        bucket["states"].append(states)
        bucket["prov"].append(provenance)

    out = []
    for image_id, bucket in per_image.items():
        out.append(
            SupervisionMatrix(
                image_id=image_id,
                proposals=tuple(bucket["boxes"]),
                class_ids=class_ids,
                states=np.asarray(bucket["states"], dtype=np.int8),
                provenance=np.asarray(bucket["prov"], dtype=np.int8),
            )
        )
    return out
