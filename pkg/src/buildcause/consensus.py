"""Cross-method agreement scoring and test-queue ordering.

Candidate graphs from the three generators are merged into a union whose
edges carry a confidence equal to the fraction of methods proposing them,
overridden to 1.0 once an intervention has validated the edge. Refuted edges
are remembered and never re-enter. The test queue lists untested edges in
ascending confidence so the least-agreed hypotheses are probed first;
full-agreement edges are deferred unless a later merge demotes them.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Mapping, Sequence

from .graph import DirectedGraph, NodeMismatch, Variable

METHOD_LABELS = ("pc", "nsem", "llm")


class EdgeStatus(enum.Enum):
    UNTESTED = "untested"
    VALIDATED = "validated"
    REFUTED = "refuted"


@dataclass(frozen=True)
class ScoredEdge:
    edge: tuple[int, int]
    confidence: float
    supporters: frozenset[str]
    status: EdgeStatus = EdgeStatus.UNTESTED

    def __post_init__(self) -> None:
        object.__setattr__(self, "supporters", frozenset(self.supporters))
        unknown = self.supporters - set(METHOD_LABELS)
        if unknown:
            raise ValueError(f"unknown supporter labels: {sorted(unknown)}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence out of range: {self.confidence}")
        if self.status is EdgeStatus.VALIDATED and self.confidence != 1.0:
            raise ValueError("validated edges must carry confidence 1.0")
        if self.status is EdgeStatus.UNTESTED:
            expected = len(self.supporters) / 3.0
            if abs(self.confidence - expected) > 1e-12:
                raise ValueError(
                    f"untested confidence {self.confidence} != "
                    f"{len(self.supporters)}/3"
                )


@dataclass(frozen=True)
class UnionGraph:
    nodes: tuple[Variable, ...]
    scored_edges: tuple[ScoredEdge, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "scored_edges", tuple(self.scored_edges))
        seen = [se.edge for se in self.scored_edges]
        if len(seen) != len(set(seen)):
            raise ValueError("duplicate edges in union")

    @property
    def edge_set(self) -> frozenset[tuple[int, int]]:
        return frozenset(se.edge for se in self.scored_edges)

    def lookup(self, edge: tuple[int, int]) -> ScoredEdge | None:
        for se in self.scored_edges:
            if se.edge == edge:
                return se
        return None

    def graph(self) -> DirectedGraph:
        return DirectedGraph(self.nodes, self.edge_set)


def merge(
    g1: DirectedGraph | None,
    g2: DirectedGraph | None,
    g3: DirectedGraph | None,
    history: Mapping[tuple[int, int], EdgeStatus] | None = None,
) -> UnionGraph:
    """Union the candidate edge sets with agreement scores.

    Positional arguments follow METHOD_LABELS; a disabled generator passes
    None and simply contributes no support (the 1/3 denominator is fixed).
    Edges Refuted in ``history`` are excluded even if re-proposed; Validated
    edges are carried at confidence 1.0 even when no longer proposed.
    """
    candidates = [(label, g) for label, g in zip(METHOD_LABELS, (g1, g2, g3))]
    present = [g for _, g in candidates if g is not None]
    if not present:
        raise ValueError("at least one candidate graph required")
    nodes = present[0].nodes
    for g in present[1:]:
        if g.nodes != nodes:
            raise NodeMismatch("candidate graphs have different variable sets")
    history = dict(history or {})

    supporters: dict[tuple[int, int], set[str]] = {}
    for label, g in candidates:
        if g is None:
            continue
        for edge in g.edges:
            supporters.setdefault(edge, set()).add(label)
    for edge, status in history.items():
        if status is EdgeStatus.VALIDATED:
            supporters.setdefault(edge, set())

    scored = []
    for edge in sorted(supporters):
        status = history.get(edge, EdgeStatus.UNTESTED)
        if status is EdgeStatus.REFUTED:
            continue
        if status is EdgeStatus.VALIDATED:
            confidence = 1.0
        else:
            confidence = len(supporters[edge]) / 3.0
        scored.append(
            ScoredEdge(edge, confidence, frozenset(supporters[edge]), status)
        )
    return UnionGraph(nodes, tuple(scored))


def rank_for_testing(union: UnionGraph) -> list[ScoredEdge]:
    """Untested, below-full-consensus edges in ascending confidence order."""
    eligible = [
        se
        for se in union.scored_edges
        if se.status is EdgeStatus.UNTESTED and se.confidence < 1.0
    ]
    return sorted(eligible, key=lambda se: (se.confidence, se.edge))


def validated_subgraph(
    union: UnionGraph,
    include_full_consensus: bool = True,
) -> frozenset[tuple[int, int]]:
    """Edges earning a place in a final graph: Validated ones, plus untested
    full-consensus edges when requested (the deferral rule trusts them)."""
    keep = set()
    for se in union.scored_edges:
        if se.status is EdgeStatus.VALIDATED:
            keep.add(se.edge)
        elif (
            include_full_consensus
            and se.status is EdgeStatus.UNTESTED
            and se.confidence == 1.0
        ):
            keep.add(se.edge)
    return frozenset(keep)


def merge_from(
    candidates: Mapping[str, DirectedGraph | None],
    history: Mapping[tuple[int, int], EdgeStatus] | None = None,
) -> UnionGraph:
    """merge() with keyword lookup by method label (missing labels → None)."""
    unknown = set(candidates) - set(METHOD_LABELS)
    if unknown:
        raise ValueError(f"unknown method labels: {sorted(unknown)}")
    args: Sequence[DirectedGraph | None] = [
        candidates.get(label) for label in METHOD_LABELS
    ]
    return merge(args[0], args[1], args[2], history)
