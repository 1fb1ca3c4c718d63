"""Directed-graph data model, physical-constraint enforcement, and structural metrics.

Graphs are immutable values: every transformation returns a new instance, so
loop iterations can keep cheap snapshots of intermediate hypotheses.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from enum import Enum
from typing import Iterable, Sequence

import numpy as np


class VarKind(Enum):
    """Role of a variable in the sensed environment."""

    INPUT = "input"
    MEDIATOR = "mediator"
    OUTPUT = "output"


class NodeMismatch(ValueError):
    """Compared graphs do not share the same ordered node set."""


class ConstraintConflict(ValueError):
    """A required orientation cannot be applied without creating a cycle."""


@dataclass(frozen=True)
class Variable:
    """A named, bounded sensor or outcome channel."""

    name: str
    kind: VarKind
    unit: str = ""
    bounds: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self) -> None:
        low, high = self.bounds
        if not low < high:
            raise ValueError(f"bounds must satisfy low < high, got {self.bounds!r}")

    @property
    def intervenable(self) -> bool:
        return self.kind is not VarKind.OUTPUT


@dataclass(frozen=True)
class StructuralConstraints:
    """Domain restrictions on admissible edges.

    ``forbidden_edges`` and ``required_orientations`` hold (source, target)
    index pairs; the two sets must be disjoint.
    """

    forbid_output_sources: bool = True
    forbidden_edges: frozenset[tuple[int, int]] = frozenset()
    required_orientations: frozenset[tuple[int, int]] = frozenset()

    def __post_init__(self) -> None:
        object.__setattr__(self, "forbidden_edges", frozenset(self.forbidden_edges))
        object.__setattr__(
            self, "required_orientations", frozenset(self.required_orientations)
        )
        overlap = self.forbidden_edges & self.required_orientations
        if overlap:
            raise ValueError(f"forbidden and required sets overlap: {sorted(overlap)}")


@dataclass(frozen=True)
class DirectedGraph:
    """Ordered node tuple plus a directed edge set of (source, target) index pairs."""

    nodes: tuple[Variable, ...]
    edges: frozenset[tuple[int, int]] = frozenset()

    def __post_init__(self) -> None:
        object.__setattr__(self, "nodes", tuple(self.nodes))
        edges = frozenset((int(i), int(j)) for i, j in self.edges)
        object.__setattr__(self, "edges", edges)
        names = [v.name for v in self.nodes]
        if len(set(names)) != len(names):
            raise ValueError("node names must be unique")
        n = len(self.nodes)
        for i, j in edges:
            if i == j:
                raise ValueError(f"self-loop on node {i}")
            if not (0 <= i < n and 0 <= j < n):
                raise ValueError(f"edge ({i}, {j}) out of range for {n} nodes")

    @property
    def n(self) -> int:
        return len(self.nodes)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(v.name for v in self.nodes)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"unknown node {name!r}") from None

    def sorted_edges(self) -> list[tuple[int, int]]:
        return sorted(self.edges)

    def edge_names(self) -> list[tuple[str, str]]:
        names = self.names
        return [(names[i], names[j]) for i, j in self.sorted_edges()]

    def adjacency(self) -> np.ndarray:
        """0/1 matrix A with A[i, j] = 1 iff edge i -> j."""
        a = np.zeros((self.n, self.n), dtype=np.int8)
        for i, j in self.edges:
            a[i, j] = 1
        return a

    def has_edge(self, i: int, j: int) -> bool:
        return (i, j) in self.edges

    def with_edges(self, extra: Iterable[tuple[int, int]]) -> "DirectedGraph":
        return replace(self, edges=self.edges | set(extra))

    def without_edges(self, gone: Iterable[tuple[int, int]]) -> "DirectedGraph":
        return replace(self, edges=self.edges - set(gone))

    def replace_edges(self, edges: Iterable[tuple[int, int]]) -> "DirectedGraph":
        return replace(self, edges=frozenset(edges))

    def reordered(self, names: Sequence[str]) -> "DirectedGraph":
        """Permute nodes into the given name order, remapping edges."""
        if sorted(names) != sorted(self.names):
            raise NodeMismatch(f"cannot reorder {self.names} into {tuple(names)}")
        perm = {self.index(name): k for k, name in enumerate(names)}
        nodes = tuple(self.nodes[self.index(name)] for name in names)
        edges = frozenset((perm[i], perm[j]) for i, j in self.edges)
        return DirectedGraph(nodes, edges)

    def to_json_dict(self) -> dict:
        names = self.names
        return {
            "nodes": list(names),
            "edges": [[names[i], names[j]] for i, j in self.sorted_edges()],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2) + "\n"

    @classmethod
    def from_json_dict(
        cls, obj: dict, template: Sequence[Variable] | None = None
    ) -> "DirectedGraph":
        """Build a graph from ``{"nodes": [...], "edges": [[src, tgt], ...]}``.

        When ``template`` variables are given, node names are matched against
        them (keeping the JSON node order); otherwise placeholder mediator
        variables are created.
        """
        names = [str(s) for s in obj["nodes"]]
        if template is not None:
            by_name = {v.name: v for v in template}
            missing = [s for s in names if s not in by_name]
            if missing:
                raise NodeMismatch(f"nodes not in variable set: {missing}")
            nodes = tuple(by_name[s] for s in names)
        else:
            nodes = tuple(
                Variable(s, VarKind.MEDIATOR, bounds=(0.0, 1.0)) for s in names
            )
        pos = {s: k for k, s in enumerate(names)}
        edges = set()
        for src, tgt in obj.get("edges", []):
            if src not in pos or tgt not in pos:
                raise NodeMismatch(f"edge ({src!r}, {tgt!r}) names unknown nodes")
            edges.add((pos[src], pos[tgt]))
        return cls(nodes, frozenset(edges))

    @classmethod
    def from_json(
        cls, text: str, template: Sequence[Variable] | None = None
    ) -> "DirectedGraph":
        return cls.from_json_dict(json.loads(text), template)


@dataclass(frozen=True)
class EdgeConfusion:
    """Counts over all n(n-1) ordered node pairs."""

    tp: int
    fp: int
    fn: int
    tn: int


def _check_same_nodes(a: DirectedGraph, b: DirectedGraph) -> None:
    if a.names != b.names:
        raise NodeMismatch(f"node sets differ: {a.names} vs {b.names}")


def is_acyclic(g: DirectedGraph) -> bool:
    """Kahn peeling: the graph is acyclic iff every node can be dequeued."""
    indeg = [0] * g.n
    out: list[list[int]] = [[] for _ in range(g.n)]
    for i, j in g.edges:
        indeg[j] += 1
        out[i].append(j)
    queue = [v for v in range(g.n) if indeg[v] == 0]
    seen = 0
    while queue:
        v = queue.pop()
        seen += 1
        for w in out[v]:
            indeg[w] -= 1
            if indeg[w] == 0:
                queue.append(w)
    return seen == g.n


def topological_order(g: DirectedGraph) -> list[int]:
    """Smallest-index-first topological order; ValueError on a cyclic graph."""
    indeg = [0] * g.n
    out: list[list[int]] = [[] for _ in range(g.n)]
    for i, j in g.edges:
        indeg[j] += 1
        out[i].append(j)
    ready = sorted(v for v in range(g.n) if indeg[v] == 0)
    order: list[int] = []
    while ready:
        v = ready.pop(0)
        order.append(v)
        changed = False
        for w in out[v]:
            indeg[w] -= 1
            if indeg[w] == 0:
                ready.append(w)
                changed = True
        if changed:
            ready.sort()
    if len(order) != g.n:
        raise ValueError("graph has a cycle")
    return order


def find_cycle(n_nodes: int, edges: Iterable[tuple[int, int]]) -> list[tuple[int, int]] | None:
    """Return one directed cycle as an edge list, or None.

    Deterministic: DFS explores successors in ascending index order starting
    from the lowest-index node, so repeated calls on the same edge set find
    the same cycle.
    """
    succ: dict[int, list[int]] = {v: [] for v in range(n_nodes)}
    for i, j in edges:
        succ[i].append(j)
    for v in succ:
        succ[v].sort()
    color = [0] * n_nodes  # 0 unvisited, 1 on stack, 2 done
    parent_edge: dict[int, tuple[int, int]] = {}

    for start in range(n_nodes):
        if color[start] != 0:
            continue
        stack: list[tuple[int, int]] = [(start, 0)]
        color[start] = 1
        while stack:
            v, k = stack[-1]
            if k < len(succ[v]):
                stack[-1] = (v, k + 1)
                w = succ[v][k]
                if color[w] == 1:
                    # walk back from v to w along the DFS stack
                    cycle = [(v, w)]
                    node = v
                    while node != w:
                        i, j = parent_edge[node]
                        cycle.append((i, j))
                        node = i
                    cycle.reverse()
                    return cycle
                if color[w] == 0:
                    color[w] = 1
                    parent_edge[w] = (v, w)
                    stack.append((w, 0))
            else:
                color[v] = 2
                stack.pop()
    return None


def apply_constraints(g: DirectedGraph, c: StructuralConstraints) -> DirectedGraph:
    """Filter and reorient edges so the graph satisfies the constraints.

    Output-source edges and forbidden edges are dropped; a present edge whose
    reverse is required gets flipped. Flips are applied in sorted order and a
    flip that would close a cycle raises ConstraintConflict. Idempotent.
    """
    edges = set(g.edges)
    if c.forbid_output_sources:
        edges = {(i, j) for i, j in edges if g.nodes[i].kind is not VarKind.OUTPUT}
    edges -= set(c.forbidden_edges)
    for s, t in sorted(c.required_orientations):
        if (t, s) in edges:
            edges.discard((t, s))
            if (s, t) not in edges:
                if _has_path(g.n, edges, t, s):
                    raise ConstraintConflict(
                        f"required orientation ({s}, {t}) would create a cycle"
                    )
                edges.add((s, t))
    return g.replace_edges(edges)


def _has_path(n: int, edges: set[tuple[int, int]], src: int, dst: int) -> bool:
    succ: dict[int, list[int]] = {v: [] for v in range(n)}
    for i, j in edges:
        succ[i].append(j)
    seen = {src}
    stack = [src]
    while stack:
        v = stack.pop()
        if v == dst:
            return True
        for w in succ[v]:
            if w not in seen:
                seen.add(w)
                stack.append(w)
    return False


def shd(g_true: DirectedGraph, g_hat: DirectedGraph) -> int:
    """Structural Hamming distance: entrywise L1 gap between adjacency matrices.

    A reversed edge changes two entries and therefore counts 2.
    """
    _check_same_nodes(g_true, g_hat)
    return int(np.abs(g_true.adjacency() - g_hat.adjacency()).sum())


def edge_confusion(g_true: DirectedGraph, g_hat: DirectedGraph) -> EdgeConfusion:
    """Directed-edge confusion counts over all ordered node pairs."""
    _check_same_nodes(g_true, g_hat)
    tp = fp = fn = tn = 0
    for i in range(g_true.n):
        for j in range(g_true.n):
            if i == j:
                continue
            in_true = (i, j) in g_true.edges
            in_hat = (i, j) in g_hat.edges
            if in_true and in_hat:
                tp += 1
            elif in_hat:
                fp += 1
            elif in_true:
                fn += 1
            else:
                tn += 1
    return EdgeConfusion(tp, fp, fn, tn)
