from __future__ import annotations

import pytest

from detpipe import build_hierarchy


@pytest.fixture
def chain_hierarchy():
    """a -> b -> c (c is the leaf, a the root)."""
    return build_hierarchy(["a", "b", "c"], [("b", "a"), ("c", "b")])


@pytest.fixture
def diamond_hierarchy():
    """D has parents B and C, both children of A."""
    return build_hierarchy(
        ["A", "B", "C", "D"],
        [("B", "A"), ("C", "A"), ("D", "B"), ("D", "C")],
    )


@pytest.fixture
def parts_hierarchy():
    """Vehicles with part classes hanging off Car."""
    classes = ["Entity", "Person", "Face", "Vehicle", "Car", "Tire", "Plate"]
    edges = [
        ("Person", "Entity"),
        ("Face", "Person"),
        ("Vehicle", "Entity"),
        ("Car", "Vehicle"),
        ("Tire", "Car"),
        ("Plate", "Car"),
    ]
    return build_hierarchy(classes, edges)
