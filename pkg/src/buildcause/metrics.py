"""Graph accuracy scores and operational cost/risk summaries.

Structural quality is precision/recall/F1 over directed edges plus the
Hamming distance. Operational impact aggregates intervention records: each
record contributes a weighted sum of its satisfaction loss and energy
increase, quality-filtered by standardized effect magnitude, and a method is
charged only for its false-positive edges, so a method proposing no spurious
edges reports exactly zero cost and risk. Statistical confidence maps a
Welch t-test p-value onto [0.5, 0.9].
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import stats

from .graph import DirectedGraph, edge_confusion, shd
from .intervene import InterventionRecord


class InsufficientSamples(ValueError):
    """A phase has fewer than two observations, so no variance exists."""


@dataclass(frozen=True)
class CostConfig:
    alpha: float = 0.6
    beta: float = 0.6
    quality_delta_min: float = 0.05
    high_conf_p: float = 0.001
    high_conf_value: float = 0.9

    def __post_init__(self) -> None:
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("cost weights must be nonnegative")
        if self.quality_delta_min < 0:
            raise ValueError("quality gate must be nonnegative")
        if not 0 < self.high_conf_p < 1:
            raise ValueError("p threshold must lie in (0, 1)")


@dataclass(frozen=True)
class MethodEvaluation:
    precision: float
    recall: float
    f1: float
    shd: int
    cost: float
    risk: float
    n_false_positive_edges: int

    def __post_init__(self) -> None:
        pr = self.precision + self.recall
        expected = 2 * self.precision * self.recall / pr if pr > 0 else 0.0
        if not math.isclose(self.f1, expected, rel_tol=1e-9, abs_tol=1e-12):
            raise ValueError("f1 inconsistent with precision and recall")
        if self.cost < 0 or self.risk < 0:
            raise ValueError("cost and risk are nonnegative")


def precision_recall_f1(
    g_true: DirectedGraph, g_hat: DirectedGraph
) -> tuple[float, float, float]:
    c = edge_confusion(g_true, g_hat)
    precision = c.tp / (c.tp + c.fp) if c.tp + c.fp else 0.0
    recall = c.tp / (c.tp + c.fn) if c.tp + c.fn else 0.0
    f1 = (
        2 * precision * recall / (precision + recall)
        if precision + recall
        else 0.0
    )
    return precision, recall, f1


def _record_delta(record: InterventionRecord) -> float:
    """Record-level standardized effect: mean of the trial deltas."""
    if not record.trial_results:
        return 0.0
    return float(np.mean([t.delta for t in record.trial_results]))


def _quality_pass(
    records: Iterable[InterventionRecord], cfg: CostConfig
) -> list[InterventionRecord]:
    return [r for r in records if abs(_record_delta(r)) > cfg.quality_delta_min]


def edge_cost(
    records: Sequence[InterventionRecord], cfg: CostConfig | None = None
) -> float:
    """Mean alpha*s + beta*e over quality-passing records; 0 when none."""
    cfg = cfg or CostConfig()
    kept = _quality_pass(records, cfg)
    if not kept:
        return 0.0
    return float(
        np.mean(
            [cfg.alpha * r.satisfaction_loss + cfg.beta * r.energy_increase for r in kept]
        )
    )


def edge_risk(
    records: Sequence[InterventionRecord], cfg: CostConfig | None = None
) -> float:
    """Comfort-only component: mean satisfaction loss over quality-passing
    records. A repo definition, reported alongside cost with that label."""
    cfg = cfg or CostConfig()
    kept = _quality_pass(records, cfg)
    if not kept:
        return 0.0
    return float(np.mean([r.satisfaction_loss for r in kept]))


def false_positive_edges(
    g_hat: DirectedGraph, g_true: DirectedGraph
) -> frozenset[tuple[int, int]]:
    edge_confusion(g_true, g_hat)  # node-set check
    return frozenset(g_hat.edges - g_true.edges)


def method_cost(
    g_hat: DirectedGraph,
    g_true: DirectedGraph,
    edge_costs: Mapping[tuple[int, int], float],
) -> float:
    fp = false_positive_edges(g_hat, g_true)
    if not fp:
        return 0.0
    return float(np.mean([edge_costs.get(e, 0.0) for e in sorted(fp)]))


def method_risk(
    g_hat: DirectedGraph,
    g_true: DirectedGraph,
    records: Mapping[tuple[int, int], Sequence[InterventionRecord]],
    cfg: CostConfig | None = None,
) -> float:
    fp = false_positive_edges(g_hat, g_true)
    if not fp:
        return 0.0
    cfg = cfg or CostConfig()
    return float(np.mean([edge_risk(records.get(e, ()), cfg) for e in sorted(fp)]))


def welch_t_test(pre: Sequence[float], post: Sequence[float]) -> tuple[float, float]:
    """Two-sided Welch t statistic and p-value; constant equal phases give
    p = 1, constant unequal phases give p = 0."""
    a = np.asarray(pre, dtype=float)
    b = np.asarray(post, dtype=float)
    if len(a) < 2 or len(b) < 2:
        raise InsufficientSamples("need at least two samples per phase")
    va, vb = np.var(a, ddof=1), np.var(b, ddof=1)
    na, nb = len(a), len(b)
    se2 = va / na + vb / nb
    diff = float(np.mean(b) - np.mean(a))
    if se2 == 0.0:
        return (0.0, 1.0) if diff == 0.0 else (math.inf, 0.0)
    t = diff / math.sqrt(se2)
    dof = se2**2 / ((va / na) ** 2 / (na - 1) + (vb / nb) ** 2 / (nb - 1))
    p = 2.0 * float(stats.t.sf(abs(t), dof))
    return float(t), min(p, 1.0)


def effect_confidence(
    pre: Sequence[float],
    post: Sequence[float],
    cfg: CostConfig | None = None,
) -> float:
    cfg = cfg or CostConfig()
    _, p = welch_t_test(pre, post)
    if p < cfg.high_conf_p:
        return cfg.high_conf_value
    return max(0.5, 0.5 + 0.4 * (1.0 - p / cfg.high_conf_p))


def evaluate_method(
    g_true: DirectedGraph,
    g_hat: DirectedGraph,
    records: Mapping[tuple[int, int], Sequence[InterventionRecord]] | None = None,
    cfg: CostConfig | None = None,
) -> MethodEvaluation:
    cfg = cfg or CostConfig()
    records = records or {}
    precision, recall, f1 = precision_recall_f1(g_true, g_hat)
    fp = false_positive_edges(g_hat, g_true)
    costs = {e: edge_cost(records.get(e, ()), cfg) for e in fp}
    return MethodEvaluation(
        precision=precision,
        recall=recall,
        f1=f1,
        shd=shd(g_true, g_hat),
        cost=method_cost(g_hat, g_true, costs),
        risk=method_risk(g_hat, g_true, records, cfg),
        n_false_positive_edges=len(fp),
    )


METRICS_CSV_FIELDS = (
    "scenario",
    "method",
    "seed",
    "precision",
    "recall",
    "f1",
    "shd",
    "cost",
    "risk",
)


def write_metrics_csv(rows: Sequence[Mapping], path) -> None:
    """One row per (scenario, method, seed) cell."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRICS_CSV_FIELDS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row.get(k, "") for k in METRICS_CSV_FIELDS})
