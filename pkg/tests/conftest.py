"""Shared fixtures and reference helpers for the test suite."""

from __future__ import annotations

import itertools

import numpy as np
import pytest

from buildcause.graph import DirectedGraph, Variable, VarKind


def room_variables() -> tuple[Variable, ...]:
    return (
        Variable("Temperature", VarKind.INPUT, "degC", (18.0, 30.0)),
        Variable("Humidity", VarKind.INPUT, "%RH", (30.0, 70.0)),
        Variable("AirQuality", VarKind.INPUT, "AQI", (0.0, 500.0)),
        Variable("EnergyConsumption", VarKind.OUTPUT, "%", (0.0, 100.0)),
        Variable("OverallSatisfaction", VarKind.OUTPUT, "%", (0.0, 100.0)),
    )


ROOM_TRUTH_EDGES = frozenset(
    {(0, 3), (0, 4), (1, 3), (1, 4), (2, 3), (2, 4)}
)


@pytest.fixture
def room_vars() -> tuple[Variable, ...]:
    return room_variables()


@pytest.fixture
def room_truth(room_vars) -> DirectedGraph:
    return DirectedGraph(room_vars, ROOM_TRUTH_EDGES)


def toy_variables(n: int) -> tuple[Variable, ...]:
    return tuple(Variable(f"X{k}", VarKind.MEDIATOR, "", (0.0, 1.0)) for k in range(n))


def all_digraphs(n: int):
    """Every labelled digraph on n nodes (no self-loops), as edge frozensets."""
    pairs = [(i, j) for i in range(n) for j in range(n) if i != j]
    for mask in range(1 << len(pairs)):
        yield frozenset(p for k, p in enumerate(pairs) if mask >> k & 1)


def reachability_has_cycle(n: int, edges) -> bool:
    """Floyd-Warshall closure oracle: cyclic iff some node reaches itself."""
    reach = np.zeros((n, n), dtype=bool)
    for i, j in edges:
        reach[i, j] = True
    for k in range(n):
        for i in range(n):
            if reach[i, k]:
                reach[i] |= reach[k]
    return bool(reach.diagonal().any())


def pairwise_counts(n: int, true_edges, hat_edges):
    """Reference confusion counts computed by direct enumeration."""
    tp = fp = fn = tn = 0
    for i, j in itertools.permutations(range(n), 2):
        t, h = (i, j) in true_edges, (i, j) in hat_edges
        tp += t and h
        fp += h and not t
        fn += t and not h
        tn += not t and not h
    return tp, fp, fn, tn
