"""Iterative discovery loop: generate, merge, rank, intervene, reweight.

Each iteration reruns the enabled hypothesis generators on the current
weighted dataset, merges their edge sets into a scored union, and probes the
lowest-agreement untested edge with a do-intervention. Verdicts accumulate:
validated edges are pinned at full confidence, refuted edges leave the union
for good, and the post-intervention windows are folded back into the dataset
as weight-2.0 pseudo-samples. The loop stops when every union edge is
validated, when the iteration budget is spent, when a supplied ground truth
is matched exactly, or when nothing remains to test.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .consensus import (
    EdgeStatus,
    METHOD_LABELS,
    UnionGraph,
    merge_from,
    rank_for_testing,
    validated_subgraph,
)
from .graph import (
    DirectedGraph,
    StructuralConstraints,
    Variable,
    apply_constraints,
    find_cycle,
    shd,
)
from .intervene import (
    Scheduler,
    design_intervention,
    execute,
    to_pseudo_samples,
)
from .llm import MockProvider, PriorUnavailable, build_prompt, query_prior
from .metrics import CostConfig, MethodEvaluation, evaluate_method
from .nsem import NsemConfig, nsem_discover
from .pc import PcConfig, pc_discover
from .simulate import SampleBatch

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LoopConfig:
    t_max: int = 60
    generators: tuple[str, ...] = METHOD_LABELS
    enable_ranking: bool = True
    enable_llm_interventions: bool = False
    enable_validation: bool = True
    enable_dataset_update: bool = True
    ground_truth: DirectedGraph | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "generators", tuple(self.generators))
        if self.t_max < 1:
            raise ValueError("t_max must be at least 1")
        if not self.generators:
            raise ValueError("at least one generator required")
        unknown = set(self.generators) - set(METHOD_LABELS)
        if unknown:
            raise ValueError(f"unknown generators: {sorted(unknown)}")


@dataclass(frozen=True)
class IterationTrace:
    index: int
    candidates: dict
    union: UnionGraph
    tested_edge: tuple[int, int] | None
    verdict: EdgeStatus | None
    graph_edges: frozenset
    shd_vs_truth: int | None


@dataclass
class RunReport:
    final: DirectedGraph
    trace: tuple[IterationTrace, ...]
    history: dict
    records: dict
    terminated_by: str
    seed: int
    warnings: tuple[str, ...] = ()
    evaluation: MethodEvaluation | None = None
    elapsed_seconds: float = 0.0

    @property
    def n_interventions(self) -> int:
        return sum(len(v) for v in self.records.values())


def _edge_confidences(union: UnionGraph) -> dict:
    return {se.edge: se.confidence for se in union.scored_edges}


def _graph_from_union(
    union: UnionGraph,
    variables: tuple[Variable, ...],
    constraints: StructuralConstraints | None,
) -> DirectedGraph:
    """Validated plus deferred full-consensus edges, constraint-filtered and
    acyclic (cycles shed their lowest-confidence edge)."""
    edges = set(validated_subgraph(union, include_full_consensus=True))
    graph = DirectedGraph(variables, frozenset(edges))
    if constraints is not None:
        graph = apply_constraints(graph, constraints)
        edges = set(graph.edges)
    conf = _edge_confidences(union)
    while True:
        cycle = find_cycle(len(variables), edges)
        if cycle is None:
            break
        edges.discard(min(cycle, key=lambda e: (conf.get(e, 0.0), e)))
    return DirectedGraph(variables, frozenset(edges))


def final_graph(
    trace: Sequence[IterationTrace],
    constraints: StructuralConstraints | None = None,
) -> DirectedGraph:
    """Final estimate from a completed run's trace."""
    if not trace:
        return DirectedGraph((), frozenset())
    union = trace[-1].union
    return _graph_from_union(union, union.nodes, constraints)


def _column_matrix(batch: SampleBatch, variables: Sequence[Variable]) -> np.ndarray:
    return np.column_stack([batch.column(v.name) for v in variables])


def _observational_means(
    batch: SampleBatch, variables: Sequence[Variable]
) -> dict[str, float]:
    obs_rows = np.array([iv is None for iv in batch.interventions], dtype=bool)
    rows = batch.values if obs_rows.all() else batch.values[obs_rows]
    cols = {name: batch.names.index(name) for name in (v.name for v in variables)}
    return {name: float(np.mean(rows[:, idx])) for name, idx in cols.items()}


def _run_generators(
    batch: SampleBatch,
    variables: tuple[Variable, ...],
    cfg: LoopConfig,
    constraints: StructuralConstraints | None,
    provider,
    prompt,
    pc_config: PcConfig,
    nsem_config: NsemConfig,
    warnings: list[str],
) -> dict:
    candidates: dict = {}
    if "pc" in cfg.generators:
        candidates["pc"] = pc_discover(batch, variables, constraints, pc_config).graph
    if "nsem" in cfg.generators:
        values = _column_matrix(batch, variables)
        graph, _ = nsem_discover(
            values, batch.weights, variables, constraints, nsem_config
        )
        candidates["nsem"] = graph
    if "llm" in cfg.generators:
        try:
            candidates["llm"] = query_prior(provider, prompt, variables, constraints)
        except PriorUnavailable as exc:
            msg = f"language-model prior unavailable, continuing without it: {exc}"
            log.warning(msg)
            warnings.append(msg)
            candidates["llm"] = None
    return candidates


def run(
    data_obs: SampleBatch,
    variables: Sequence[Variable],
    cfg: LoopConfig,
    backend=None,
    provider=None,
    constraints: StructuralConstraints | None = None,
    pc_config: PcConfig | None = None,
    nsem_config: NsemConfig | None = None,
    plan_overrides: Mapping | None = None,
    cost_config: CostConfig | None = None,
) -> RunReport:
    """Execute the full loop and assemble the report.

    ``backend`` may be None when ``cfg.enable_validation`` is off
    (observation-only mode: one generator pass, no interventions).
    """
    t0 = time.perf_counter()
    if data_obs.n_rows == 0:
        raise ValueError("observational dataset is empty")
    variables = tuple(variables)
    if cfg.enable_validation and backend is None:
        raise ValueError("validation requires an execution backend")
    provider = provider if provider is not None else MockProvider()
    pc_config = pc_config or PcConfig()
    nsem_config = nsem_config or NsemConfig(seed=cfg.seed)
    plan_overrides = dict(plan_overrides or {})
    prompt = build_prompt(variables) if "llm" in cfg.generators else None
    scheduler = Scheduler(
        daily_cap=plan_overrides.get("daily_cap", 1000),
        min_spacing=plan_overrides.get("min_spacing", 300),
    )
    shuffler = np.random.default_rng(np.random.SeedSequence((cfg.seed, 71)))
    baseline_means = _observational_means(data_obs, variables)

    dataset = data_obs
    dataset_dirty = True
    candidates: dict = {}
    history: dict = {}
    records: dict = {}
    warnings: list[str] = []
    trace: list[IterationTrace] = []
    terminated_by = "t_max"

    def _snapshot(union):
        graph_now = _graph_from_union(union, variables, constraints)
        shd_now = (
            shd(cfg.ground_truth, graph_now) if cfg.ground_truth is not None else None
        )
        return graph_now, shd_now

    def _log(index, union, graph_now, shd_now, tested=None, verdict=None):
        trace.append(
            IterationTrace(
                index=index,
                candidates={
                    k: (g.edges if g is not None else None)
                    for k, g in candidates.items()
                },
                union=union,
                tested_edge=tested,
                verdict=verdict,
                graph_edges=graph_now.edges,
                shd_vs_truth=shd_now,
            )
        )

    def _all_validated(union):
        return bool(union.scored_edges) and all(
            se.status is EdgeStatus.VALIDATED for se in union.scored_edges
        )

    for index in range(1, cfg.t_max + 1):
        if dataset_dirty:
            candidates = _run_generators(
                dataset,
                variables,
                cfg,
                constraints,
                provider,
                prompt,
                pc_config,
                nsem_config,
                warnings,
            )
            dataset_dirty = False
        if all(g is None for g in candidates.values()):
            raise PriorUnavailable("no generator produced a candidate graph")
        union = merge_from(candidates, history)
        graph_now, shd_now = _snapshot(union)

        if shd_now == 0:
            terminated_by = "shd_zero"
            _log(index, union, graph_now, shd_now)
            break
        if _all_validated(union):
            terminated_by = "all_validated"
            _log(index, union, graph_now, shd_now)
            break
        if not cfg.enable_validation:
            terminated_by = "observation_only"
            _log(index, union, graph_now, shd_now)
            break

        queue = rank_for_testing(union)
        if not cfg.enable_ranking:
            shuffler.shuffle(queue)
        if not queue:
            terminated_by = "queue_empty"
            _log(index, union, graph_now, shd_now)
            break

        edge = queue[0].edge
        plan = design_intervention(
            edge,
            variables,
            baseline_means[variables[edge[0]].name],
            provider=provider if cfg.enable_llm_interventions else None,
            **plan_overrides,
        )
        record = execute(plan, backend, scheduler=scheduler)
        history[edge] = record.verdict
        records.setdefault(edge, []).append(record)
        if cfg.enable_dataset_update:
            pseudo = to_pseudo_samples(record)
            if pseudo:
                dataset = dataset.concat(SampleBatch.from_samples(pseudo))
            dataset_dirty = True

        # log end-of-iteration state so the trace reflects the fresh verdict
        union = merge_from(candidates, history)
        graph_now, shd_now = _snapshot(union)
        _log(index, union, graph_now, shd_now, tested=edge, verdict=record.verdict)
        if shd_now == 0:
            terminated_by = "shd_zero"
            break
        if _all_validated(union):
            terminated_by = "all_validated"
            break

    final = final_graph(trace, constraints)
    evaluation = None
    if cfg.ground_truth is not None:
        evaluation = evaluate_method(
            cfg.ground_truth, final, records, cost_config or CostConfig()
        )
    return RunReport(
        final=final,
        trace=tuple(trace),
        history=dict(history),
        records=dict(records),
        terminated_by=terminated_by,
        seed=cfg.seed,
        warnings=tuple(warnings),
        evaluation=evaluation,
        elapsed_seconds=time.perf_counter() - t0,
    )


def _edge_name(variables: Sequence[Variable], edge: tuple[int, int]) -> str:
    return f"{variables[edge[0]].name}->{variables[edge[1]].name}"


def report_to_json(report: RunReport, cfg: LoopConfig) -> dict:
    """Serializable run artifact. Wall-clock fields are deliberately left
    out so identical seeded runs serialize byte-identically."""
    variables = report.final.nodes
    names = report.final.names
    last_union = report.trace[-1].union if report.trace else None
    status_by_edge = {}
    if last_union is not None:
        for se in last_union.scored_edges:
            status_by_edge[se.edge] = se
    final_edges = []
    for i, j in report.final.sorted_edges():
        se = status_by_edge.get((i, j))
        final_edges.append(
            {
                "edge": [names[i], names[j]],
                "validated": bool(se and se.status is EdgeStatus.VALIDATED),
                "untested": bool(se and se.status is EdgeStatus.UNTESTED),
                "confidence": se.confidence if se else 1.0,
            }
        )
    blob = {
        "seed": report.seed,
        "config": {
            "t_max": cfg.t_max,
            "generators": list(cfg.generators),
            "enable_ranking": cfg.enable_ranking,
            "enable_llm_interventions": cfg.enable_llm_interventions,
            "enable_validation": cfg.enable_validation,
            "enable_dataset_update": cfg.enable_dataset_update,
        },
        "terminated_by": report.terminated_by,
        "n_iterations": len(report.trace),
        "n_interventions": report.n_interventions,
        "final_graph": report.final.to_json_dict(),
        "final_edges": final_edges,
        "history": {
            _edge_name(variables, e): status.value
            for e, status in sorted(report.history.items())
        },
        "warnings": list(report.warnings),
        "iterations": [
            {
                "index": t.index,
                "candidates": {
                    k: (sorted(map(list, v)) if v is not None else None)
                    for k, v in t.candidates.items()
                },
                "union": [
                    {
                        "edge": list(se.edge),
                        "confidence": round(se.confidence, 6),
                        "supporters": sorted(se.supporters),
                        "status": se.status.value,
                    }
                    for se in t.union.scored_edges
                ],
                "tested_edge": list(t.tested_edge) if t.tested_edge else None,
                "verdict": t.verdict.value if t.verdict else None,
                "shd_vs_truth": t.shd_vs_truth,
            }
            for t in report.trace
        ],
    }
    if report.evaluation is not None:
        ev = report.evaluation
        blob["metrics"] = {
            "precision": ev.precision,
            "recall": ev.recall,
            "f1": ev.f1,
            "shd": ev.shd,
            "cost": ev.cost,
            "risk": ev.risk,
            "n_false_positive_edges": ev.n_false_positive_edges,
        }
    return blob
