"""Semantic class hierarchy as a rooted DAG.

Classes are opaque string labels interned to dense indices. Multiple parents
are allowed (the Open Images hierarchy contains them), cycles are not. The
hierarchy is frozen after construction with transitive ancestor/descendant
closures precomputed, so concurrent reads are safe.
"""

from __future__ import annotations

import csv
import json
from typing import Iterable

from .errors import CycleError, ParseError, UnknownClassError


class ClassHierarchy:
    """Immutable DAG over class labels with closure queries.

    Build with :func:`build_hierarchy`, :func:`load_hierarchy_json` or
    :func:`load_hierarchy_csv` rather than instantiating directly.
    """

    def __init__(self, classes, parent_edges):
        self._classes = tuple(classes)
        self._index = {c: i for i, c in enumerate(self._classes)}
        if len(self._index) != len(self._classes):
            dupes = [c for c in self._classes if self._classes.count(c) > 1]
            raise ParseError(f"duplicate class declaration: {sorted(set(dupes))}")

        n = len(self._classes)
        parents = [set() for _ in range(n)]
        children = [set() for _ in range(n)]
        edges = set()
        for child, parent in parent_edges:
            ci = self.index(child)
            pi = self.index(parent)
            if (ci, pi) in edges:
                continue
            edges.add((ci, pi))
            parents[ci].add(pi)
            children[pi].add(ci)

        order = self._toposort(parents)
        anc = [set() for _ in range(n)]
        for i in order:  # parents appear before children
            for p in parents[i]:
                anc[i].add(p)
                anc[i] |= anc[p]
        desc = [set() for _ in range(n)]
        for i in order:
            for a in anc[i]:
                desc[a].add(i)

        self._edges = frozenset(edges)
        self._parents = tuple(frozenset(s) for s in parents)
        self._children = tuple(frozenset(s) for s in children)
        self._ancestors = tuple(frozenset(s) for s in anc)
        self._descendants = tuple(frozenset(s) for s in desc)

    @staticmethod
    def _toposort(parents):
        # Kahn's algorithm over the parent->child direction; leftovers mean a cycle.
        n = len(parents)
        remaining = [len(p) for p in parents]
        children = [[] for _ in range(n)]
        for i, ps in enumerate(parents):
            for p in ps:
                children[p].append(i)
        queue = [i for i in range(n) if remaining[i] == 0]
        order = []
        while queue:
            i = queue.pop()
            order.append(i)
            for c in children[i]:
                remaining[c] -= 1
                if remaining[c] == 0:
                    queue.append(c)
        if len(order) != n:
            raise CycleError("hierarchy edges contain a cycle")
        return order

    # -- queries -----------------------------------------------------------

    @property
    def classes(self) -> tuple[str, ...]:
        return self._classes

    @property
    def num_classes(self) -> int:
        return len(self._classes)

    def __contains__(self, class_id: str) -> bool:
        return class_id in self._index

    def index(self, class_id: str) -> int:
        try:
            return self._index[class_id]
        except KeyError:
            raise UnknownClassError(f"unknown class {class_id!r}") from None

    def label(self, index: int) -> str:
        return self._classes[index]

    def parents(self, class_id: str) -> frozenset[str]:
        return frozenset(self._classes[i] for i in self._parents[self.index(class_id)])

    def ancestors(self, class_id: str) -> frozenset[str]:
        """All proper ancestors of a class (the class itself excluded)."""
        return frozenset(self._classes[i] for i in self._ancestors[self.index(class_id)])

    def descendants(self, class_id: str) -> frozenset[str]:
        """All proper descendants of a class."""
        return frozenset(self._classes[i] for i in self._descendants[self.index(class_id)])

    def ancestor_indices(self, index: int) -> frozenset[int]:
        return self._ancestors[index]

    def descendant_indices(self, index: int) -> frozenset[int]:
        return self._descendants[index]

    def is_leaf(self, class_id: str) -> bool:
        return not self._descendants[self.index(class_id)]

    def roots(self) -> tuple[str, ...]:
        return tuple(c for i, c in enumerate(self._classes) if not self._parents[i])

    def expand_labels(self, labels: Iterable[str]) -> frozenset[str]:
        """Close a label set under the ancestor relation."""
        out = set()
        for label in labels:
            i = self.index(label)
            out.add(i)
            out |= self._ancestors[i]
        return frozenset(self._classes[i] for i in out)

    def expand_indices(self, index: int) -> frozenset[int]:
        return self._ancestors[index] | {index}


def build_hierarchy(classes: Iterable[str], edges: Iterable[tuple[str, str]]) -> ClassHierarchy:
    """Validate and freeze a hierarchy from declared classes and (child, parent) edges."""
    return ClassHierarchy(classes, edges)


def load_hierarchy_json(path) -> ClassHierarchy:
    """Parse the OID challenge hierarchy JSON (nested LabelName/Subcategory nodes)."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc}", path=path) from None

    classes: list[str] = []
    seen = set()
    edges: list[tuple[str, str]] = []

    def walk(node, parent):
        if not isinstance(node, dict) or "LabelName" not in node:
            raise ParseError("hierarchy node missing LabelName", path=path)
        name = node["LabelName"]
        if name not in seen:
            seen.add(name)
            classes.append(name)
        if parent is not None:
            edges.append((name, parent))
        for child in node.get("Subcategory", []):
            walk(child, name)

    walk(doc, None)
    return ClassHierarchy(classes, edges)


def load_hierarchy_csv(path) -> ClassHierarchy:
    """Parse a flat edge list CSV with header ``LabelName,ParentLabelName``.

    An empty ParentLabelName declares a parentless (root) class, which is how
    single-class or disconnected hierarchies are written down. Class order
    follows the LabelName column (first appearance); parents that never get
    a LabelName row of their own are appended after the declared classes.
    """
    declared: list[str] = []
    seen = set()
    edges: list[tuple[str, str]] = []
    parent_mentions: list[str] = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["LabelName", "ParentLabelName"]:
            raise ParseError(
                "expected header 'LabelName,ParentLabelName'", path=path, line=1
            )
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise ParseError(f"expected 2 columns, got {len(row)}", path=path, line=lineno)
            child, parent = row[0].strip(), row[1].strip()
            if not child:
                raise ParseError("empty LabelName", path=path, line=lineno)
            if child not in seen:
                seen.add(child)
                declared.append(child)
            if parent:
                parent_mentions.append(parent)
                edges.append((child, parent))
    for name in parent_mentions:
        if name not in seen:
            seen.add(name)
            declared.append(name)
    if not declared:
        raise ParseError("hierarchy file declares no classes", path=path)
    return ClassHierarchy(declared, edges)
