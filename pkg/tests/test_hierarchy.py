from __future__ import annotations

import json

import pytest

from detpipe import (
    CycleError,
    ParseError,
    UnknownClassError,
    build_hierarchy,
    load_hierarchy_csv,
    load_hierarchy_json,
)

from oracles import ancestors_ref, descendants_ref
from scenes import random_edges, rng_for


class TestBuild:
    def test_diamond_queries(self, diamond_hierarchy):
        h = diamond_hierarchy
        assert h.ancestors("D") == {"A", "B", "C"}
        assert h.descendants("A") == {"B", "C", "D"}
        assert h.parents("D") == {"B", "C"}
        assert h.roots() == ("A",)
        assert h.is_leaf("D")
        assert not h.is_leaf("A")
        assert h.num_classes == 4
        assert "A" in h and "Z" not in h

    def test_chain_expansion(self, chain_hierarchy):
        h = chain_hierarchy
        assert h.expand_labels({"c"}) == {"a", "b", "c"}
        assert h.expand_labels({"a"}) == {"a"}
        assert h.ancestors("a") == frozenset()
        assert h.descendants("c") == frozenset()

    def test_class_order_preserved(self):
        h = build_hierarchy(["z", "m", "a"], [("m", "z")])
        assert h.classes == ("z", "m", "a")
        assert h.index("z") == 0
        assert h.label(2) == "a"

    def test_forest_has_multiple_roots(self):
        h = build_hierarchy(["a", "b", "c"], [("c", "a")])
        assert set(h.roots()) == {"a", "b"}

    def test_cycle_rejected(self):
        with pytest.raises(CycleError):
            build_hierarchy(["a", "b"], [("a", "b"), ("b", "a")])

    def test_self_loop_rejected(self):
        with pytest.raises(CycleError):
            build_hierarchy(["a"], [("a", "a")])

    def test_unknown_edge_endpoint(self):
        with pytest.raises(UnknownClassError):
            build_hierarchy(["a"], [("a", "zz")])

    def test_unknown_query(self, chain_hierarchy):
        with pytest.raises(UnknownClassError):
            chain_hierarchy.index("zz")
        with pytest.raises(UnknownClassError):
            chain_hierarchy.ancestors("zz")

    def test_duplicate_class_rejected(self):
        with pytest.raises(ParseError):
            build_hierarchy(["a", "a"], [])

    def test_index_queries_match_label_queries(self, diamond_hierarchy):
        h = diamond_hierarchy
        for c in h.classes:
            i = h.index(c)
            assert {h.label(j) for j in h.ancestor_indices(i)} == h.ancestors(c)
            assert {h.label(j) for j in h.descendant_indices(i)} == h.descendants(c)
            assert {h.label(j) for j in h.expand_indices(i)} == h.expand_labels({c})


class TestClosureOracle:
    """Transitive closures must match a from-scratch DFS on random DAGs."""

    @pytest.mark.parametrize("case", range(25))
    def test_random_dags(self, case):
        rng = rng_for("hierarchy-closure", case)
        n = int(rng.integers(2, 100))
        classes = [f"n{i}" for i in range(n)]
        edges = random_edges(rng, classes)
        h = build_hierarchy(classes, edges)
        for c in classes:
            assert h.ancestors(c) == ancestors_ref(c, edges), c
            assert h.descendants(c) == descendants_ref(c, edges), c

    @pytest.mark.parametrize("case", range(10))
    def test_duality_and_expansion_laws(self, case):
        rng = rng_for("hierarchy-laws", case)
        classes = [f"n{i}" for i in range(int(rng.integers(2, 40)))]
        h = build_hierarchy(classes, random_edges(rng, classes))
        for a in classes:
            for b in h.ancestors(a):
                assert a in h.descendants(b)
        pick = [c for c in classes if rng.random() < 0.3]
        once = h.expand_labels(pick)
        assert set(pick) <= once
        assert h.expand_labels(once) == once
        bigger = h.expand_labels(pick + [classes[0]])
        assert once <= bigger


class TestLoaders:
    def test_csv_round_trip_order(self, tmp_path):
        p = tmp_path / "h.csv"
        p.write_text(
            "LabelName,ParentLabelName\n"
            "root,\n"
            "leafB,midA\n"
            "midA,root\n"
        )
        h = load_hierarchy_csv(p)
        # declaration order of the LabelName column, not first-mention order
        assert h.classes == ("root", "leafB", "midA")
        assert h.ancestors("leafB") == {"midA", "root"}

    def test_csv_parent_never_declared_is_appended(self, tmp_path):
        p = tmp_path / "h.csv"
        p.write_text("LabelName,ParentLabelName\nchild,ghost\n")
        h = load_hierarchy_csv(p)
        assert h.classes == ("child", "ghost")
        assert h.roots() == ("ghost",)

    def test_csv_missing_column(self, tmp_path):
        p = tmp_path / "h.csv"
        p.write_text("LabelName\nroot\n")
        with pytest.raises(ParseError):
            load_hierarchy_csv(p)

    def test_csv_cycle(self, tmp_path):
        p = tmp_path / "h.csv"
        p.write_text("LabelName,ParentLabelName\na,b\nb,a\n")
        with pytest.raises(CycleError):
            load_hierarchy_csv(p)

    def test_json_nested(self, tmp_path):
        p = tmp_path / "h.json"
        p.write_text(
            json.dumps(
                {
                    "LabelName": "Entity",
                    "Subcategory": [
                        {"LabelName": "Person", "Subcategory": [{"LabelName": "Face"}]},
                        {"LabelName": "Vehicle"},
                    ],
                }
            )
        )
        h = load_hierarchy_json(p)
        assert h.roots() == ("Entity",)
        assert h.ancestors("Face") == {"Person", "Entity"}
        assert h.descendants("Entity") == {"Person", "Face", "Vehicle"}

    def test_packaged_example_hierarchy(self):
        import detpipe

        root = __import__("pathlib").Path(detpipe.__file__).parent
        h = load_hierarchy_json(root / "data" / "example_hierarchy.json")
        assert "Person" in h
        assert h.ancestors("Tire") >= {"Car", "Vehicle"}

    def test_diamond_parent_repeated_in_csv(self, tmp_path):
        p = tmp_path / "h.csv"
        p.write_text(
            "LabelName,ParentLabelName\n"
            "A,\n"
            "B,A\n"
            "C,A\n"
            "D,B\n"
            "D,C\n"
        )
        h = load_hierarchy_csv(p)
        assert h.classes == ("A", "B", "C", "D")
        assert h.parents("D") == {"B", "C"}
        assert h.ancestors("D") == {"A", "B", "C"}
