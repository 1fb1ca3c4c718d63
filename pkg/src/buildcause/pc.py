"""Constraint-based structure search on weighted samples.

Skeleton discovery uses level-wise conditional-independence pruning with the
adjacency sets frozen per level, so removal order within a level cannot change
the result. Independence is judged by a Fisher-z test on weighted partial
correlations, with the effective sample size of the weighted data estimated as
(sum w)^2 / sum w^2. Orientation proceeds collider-first, then propagates with
the standard closure rules, and any still-undirected edges fall back to domain
constraints and a deterministic acyclic completion.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Sequence

import numpy as np
from scipy import stats

from .graph import (
    DirectedGraph,
    StructuralConstraints,
    Variable,
    apply_constraints,
    find_cycle,
)
from .simulate import SampleBatch


class SingularSubmatrix(RuntimeError):
    """Correlation submatrix could not be inverted (collinear conditioners)."""


def kish_neff(weights: np.ndarray) -> float:
    """Effective sample size of a weighted sample: (sum w)^2 / sum w^2."""
    w = np.asarray(weights, dtype=float)
    if w.size == 0 or not (w > 0).all():
        raise ValueError("weights must be a non-empty positive array")
    return float(w.sum() ** 2 / (w**2).sum())


def weighted_corrcoef(values: np.ndarray, weights: np.ndarray | None = None) -> np.ndarray:
    """Correlation matrix under row weights; constant columns get zero rows."""
    x = np.asarray(values, dtype=float)
    if weights is None:
        weights = np.ones(x.shape[0])
    w = np.asarray(weights, dtype=float)
    mu = w @ x / w.sum()
    xc = x - mu
    cov = (xc * w[:, None]).T @ xc / w.sum()
    d = np.sqrt(np.diag(cov))
    with np.errstate(invalid="ignore", divide="ignore"):
        r = cov / np.outer(d, d)
    r[~np.isfinite(r)] = 0.0
    np.fill_diagonal(r, 1.0)
    return np.clip(r, -1.0, 1.0)


def partial_correlation(r: np.ndarray, i: int, j: int, cond: Sequence[int]) -> float:
    """Partial correlation of i and j given cond, from a correlation matrix."""
    if not cond:
        return float(r[i, j])
    idx = [i, j, *cond]
    sub = r[np.ix_(idx, idx)]
    try:
        prec = np.linalg.inv(sub)
    except np.linalg.LinAlgError as exc:
        raise SingularSubmatrix(
            f"cannot condition ({i},{j}) on {tuple(cond)}"
        ) from exc
    denom = prec[0, 0] * prec[1, 1]
    if denom <= 0:
        raise SingularSubmatrix(f"non-positive precision for ({i},{j}|{tuple(cond)})")
    return float(np.clip(-prec[0, 1] / np.sqrt(denom), -1.0, 1.0))


def fisher_z_test(
    r: np.ndarray, n_eff: float, i: int, j: int, cond: Sequence[int] = ()
) -> tuple[float, float]:
    """(partial correlation, p-value) for independence of i and j given cond."""
    rho = partial_correlation(r, i, j, cond)
    if abs(rho) >= 1.0:
        return rho, 0.0
    dof = n_eff - len(cond) - 3.0
    if dof <= 0:
        return rho, 1.0
    stat = np.sqrt(dof) * abs(np.arctanh(rho))
    return rho, float(2.0 * stats.norm.sf(stat))


@dataclass(frozen=True)
class PcConfig:
    alpha: float = 0.05
    max_cond_set: int | None = None  # defaults to n_vars - 2
    collider_priority: bool = True


@dataclass
class PcResult:
    graph: DirectedGraph
    sepsets: dict[tuple[int, int], tuple[int, ...]]
    sepset_pvalues: dict[tuple[int, int], float]
    corr: np.ndarray
    n_eff: float
    n_tests: int = 0


def _find_skeleton(
    r: np.ndarray, n_eff: float, n: int, config: PcConfig
) -> tuple[set[frozenset[int]], dict, dict, int]:
    adj: dict[int, set[int]] = {i: set(range(n)) - {i} for i in range(n)}
    sepsets: dict[tuple[int, int], tuple[int, ...]] = {}
    pvalues: dict[tuple[int, int], float] = {}
    max_level = n - 2 if config.max_cond_set is None else config.max_cond_set
    n_tests = 0

    level = 0
    while level <= max_level:
        if all(len(adj[i]) - 1 < level for i in range(n)):
            break
        frozen = {i: sorted(adj[i]) for i in range(n)}
        for i in range(n):
            for j in frozen[i]:
                if i > j or j not in adj[i]:
                    continue
                removed = False
                for side in (i,) if level == 0 else (i, j):
                    other = j if side == i else i
                    candidates = [k for k in frozen[side] if k != other]
                    if len(candidates) < level:
                        continue
                    for cond in combinations(candidates, level):
                        try:
                            _, p = fisher_z_test(r, n_eff, i, j, cond)
                        except SingularSubmatrix:
                            continue
                        n_tests += 1
                        if p > config.alpha:
                            adj[i].discard(j)
                            adj[j].discard(i)
                            sepsets[(i, j)] = cond
                            pvalues[(i, j)] = p
                            removed = True
                            break
                    if removed:
                        break
        level += 1

    edges = {frozenset((i, j)) for i in range(n) for j in adj[i] if i < j}
    return edges, sepsets, pvalues, n_tests


def _orient_colliders(
    n: int,
    skeleton: set[frozenset[int]],
    sepsets: dict[tuple[int, int], tuple[int, ...]],
    pvalues: dict[tuple[int, int], float],
    priority_first_found: bool,
) -> tuple[set[tuple[int, int]], set[frozenset[int]]]:
    adj = {i: {j for j in range(n) if frozenset((i, j)) in skeleton} for i in range(n)}
    triples = []
    for i in range(n):
        for j in range(i + 1, n):
            if j in adj[i] or (i, j) not in sepsets:
                continue
            for k in sorted(adj[i] & adj[j]):
                if k not in sepsets[(i, j)]:
                    triples.append((i, k, j))
    if priority_first_found:
        triples.sort()
    else:
        triples.sort(key=lambda t: (-pvalues[(t[0], t[2])], t))

    directed: set[tuple[int, int]] = set()
    undirected = set(skeleton)
    for i, k, j in triples:
        for tail in (i, j):
            if (k, tail) in directed:
                continue  # an earlier collider claimed the reverse arrow
            if frozenset((tail, k)) in undirected:
                undirected.discard(frozenset((tail, k)))
            directed.add((tail, k))
    return directed, undirected


def _meek_closure(
    n: int, directed: set[tuple[int, int]], undirected: set[frozenset[int]]
) -> None:
    def adjacent(a: int, b: int) -> bool:
        return (
            (a, b) in directed
            or (b, a) in directed
            or frozenset((a, b)) in undirected
        )

    def orient(a: int, b: int) -> bool:
        e = frozenset((a, b))
        if e in undirected:
            undirected.discard(e)
            directed.add((a, b))
            return True
        return False

    changed = True
    while changed:
        changed = False
        for e in sorted(undirected, key=sorted):
            a, b = sorted(e)
            for x, y in ((a, b), (b, a)):
                # chain closure: i -> x - y with i, y non-adjacent forces x -> y
                if any(
                    (i, x) in directed and not adjacent(i, y)
                    for i in range(n)
                    if i != y
                ):
                    changed |= orient(x, y)
                    break
                # acyclicity closure: x -> k -> y plus x - y forces x -> y
                if any(
                    (x, k) in directed and (k, y) in directed for k in range(n)
                ):
                    changed |= orient(x, y)
                    break
                # double-collider closure
                ks = [
                    k
                    for k in range(n)
                    if frozenset((x, k)) in undirected and (k, y) in directed
                ]
                if any(
                    not adjacent(k1, k2)
                    for k1, k2 in combinations(sorted(ks), 2)
                ):
                    changed |= orient(x, y)
                    break
            if changed:
                break


def _creates_cycle(n: int, directed: set[tuple[int, int]], edge: tuple[int, int]) -> bool:
    return find_cycle(n, directed | {edge}) is not None


def _complete_orientation(
    variables: Sequence[Variable],
    directed: set[tuple[int, int]],
    undirected: set[frozenset[int]],
    constraints: StructuralConstraints | None,
) -> None:
    n = len(variables)
    if constraints is not None:
        for a, b in sorted(constraints.required_orientations):
            if frozenset((a, b)) in undirected:
                undirected.discard(frozenset((a, b)))
                directed.add((a, b))
        if constraints.forbid_output_sources:
            for e in sorted(undirected, key=sorted):
                a, b = sorted(e)
                a_out = not variables[a].intervenable
                b_out = not variables[b].intervenable
                if a_out != b_out:
                    undirected.discard(e)
                    directed.add((b, a) if a_out else (a, b))
    for e in sorted(undirected, key=sorted):
        a, b = sorted(e)
        undirected.discard(e)
        if not _creates_cycle(n, directed, (a, b)):
            directed.add((a, b))
        else:
            directed.add((b, a))


def _repair_cycles(
    n: int, directed: set[tuple[int, int]], corr: np.ndarray
) -> None:
    while True:
        cycle = find_cycle(n, directed)
        if cycle is None:
            return
        weakest = min(cycle, key=lambda e: (abs(corr[e[0], e[1]]), e))
        directed.discard(weakest)


def pc_discover(
    batch: SampleBatch,
    variables: Sequence[Variable],
    constraints: StructuralConstraints | None = None,
    config: PcConfig | None = None,
) -> PcResult:
    """Run the full constraint-based search over a weighted sample batch."""
    config = config or PcConfig()
    variables = tuple(variables)
    names = tuple(v.name for v in variables)
    if set(names) != set(batch.names):
        raise ValueError("batch columns do not match the variable set")
    order = [batch.names.index(nm) for nm in names]
    values = batch.values[:, order]
    n = len(variables)

    r = weighted_corrcoef(values, batch.weights)
    n_eff = kish_neff(batch.weights)

    skeleton, sepsets, pvalues, n_tests = _find_skeleton(r, n_eff, n, config)
    directed, undirected = _orient_colliders(
        n, skeleton, sepsets, pvalues, config.collider_priority
    )
    _meek_closure(n, directed, undirected)
    _complete_orientation(variables, directed, undirected, constraints)
    _repair_cycles(n, directed, r)

    graph = DirectedGraph(variables, frozenset(directed))
    if constraints is not None:
        graph = apply_constraints(graph, constraints)
    return PcResult(graph, sepsets, pvalues, r, n_eff, n_tests)
