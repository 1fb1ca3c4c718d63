"""Command-line entry point wiring scenarios, generators, and the loop.

Subcommands: ``simulate`` (observational CSV export), ``discover`` (one
full run against a scenario backend or an external CSV), ``benchmark``
(scenario x seed x method grid with aggregate metrics).

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import statistics
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from itertools import product
from time import time

from .consensus import METHOD_LABELS
from .graph import (
    DirectedGraph,
    StructuralConstraints,
    Variable,
    VarKind,
    edge_confusion,
)
from .intervene import (
    ENERGY_VAR,
    SATISFACTION_VAR,
    SIMULATOR_WINDOWS,
    record_to_json,
)
from .llm import MockProvider, PriorUnavailable, RemoteProvider
from .metrics import write_metrics_csv
from .nsem import NsemConfig
from .pipeline import LoopConfig, report_to_json, run
from .scenario import SCENARIOS, load_scenario
from .simulate import (
    SimulatorBackend,
    read_samples_csv,
    simulate_batch,
    write_samples_csv,
)

BENCHMARK_METHODS = ("full", "obs", "pc", "nsem", "llm")
BACKEND_SEED_OFFSET = 1000


# -- manifest and atomic writes ---------------------------------------------


@dataclass(frozen=True)
class RunManifest:
    """Provenance block embedded in every artifact a command writes."""

    command: str
    scenario: str | None
    config_path: str | None
    seed: int
    out_dir: str
    generators: tuple[str, ...]
    provider: str
    timestamp: float = field(default_factory=time, compare=False)

    def to_json_dict(self) -> dict:
        # the wall-clock stamp stays runtime-only so reruns with identical
        # arguments produce byte-identical files
        core = {
            "command": self.command,
            "scenario": self.scenario,
            "config_path": self.config_path,
            "seed": self.seed,
            "generators": list(self.generators),
            "provider": self.provider,
        }
        blob = json.dumps(core, sort_keys=True).encode()
        core["config_hash"] = hashlib.sha256(blob).hexdigest()[:16]
        return core


def write_text_atomic(path: str, text: str) -> None:
    """Write via a same-directory temp file and rename into place."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".part")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json_atomic(path: str, obj: dict) -> None:
    write_text_atomic(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _manifest_sidecar(path: str, manifest: RunManifest) -> None:
    write_json_atomic(path + ".manifest.json", manifest.to_json_dict())


# -- argument plumbing --------------------------------------------------------


def _parse_seeds(text: str) -> list[int]:
    """Accept ``1..5`` ranges (inclusive) and ``1,2,3`` lists."""
    if ".." in text:
        lo, hi = text.split("..", 1)
        start, stop = int(lo), int(hi)
        if stop < start:
            raise ValueError(f"empty seed range {text!r}")
        return list(range(start, stop + 1))
    return [int(tok) for tok in text.split(",") if tok.strip()]


def _parse_name_list(text: str, allowed: tuple[str, ...], what: str) -> tuple[str, ...]:
    names = tuple(tok.strip() for tok in text.split(",") if tok.strip())
    if not names:
        raise ValueError(f"no {what} given")
    unknown = [s for s in names if s not in allowed]
    if unknown:
        raise ValueError(f"unknown {what} {unknown}; choose from {list(allowed)}")
    return names


def _load_scenario_or_usage(args: argparse.Namespace, name_or_path: str):
    try:
        return load_scenario(name_or_path)
    except (OSError, ValueError, KeyError) as exc:
        args.parser.error(f"cannot load scenario {name_or_path!r}: {exc}")


def _make_provider(kind: str):
    if kind == "mock":
        return MockProvider()
    return RemoteProvider.from_env()


def _variables_from_batch(batch) -> tuple[Variable, ...]:
    """Declare CSV columns as variables: named targets are outputs, the
    rest intervenable inputs with observed-range bounds."""
    out = []
    for name in batch.names:
        col = batch.column(name)
        lo, hi = float(col.min()), float(col.max())
        if hi <= lo:
            hi = lo + 1.0
        kind = VarKind.OUTPUT if name in (ENERGY_VAR, SATISFACTION_VAR) else VarKind.INPUT
        out.append(Variable(name, kind, "", (lo, hi)))
    return tuple(out)


# -- simulate -----------------------------------------------------------------


def cmd_simulate(args: argparse.Namespace) -> int:
    spec = _load_scenario_or_usage(args, args.scenario)
    if args.n < 1:
        args.parser.error("--n must be >= 1")
    batch = simulate_batch(spec, args.n, args.seed)
    directory = os.path.dirname(os.path.abspath(args.out))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".part")
    os.close(fd)
    try:
        write_samples_csv(batch, tmp)
        os.replace(tmp, args.out)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    manifest = RunManifest(
        command="simulate",
        scenario=spec.name,
        config_path=None if args.scenario in SCENARIOS else args.scenario,
        seed=args.seed,
        out_dir=directory,
        generators=(),
        provider="none",
    )
    _manifest_sidecar(args.out, manifest)
    print(f"wrote {batch.n_rows} rows x {len(batch.names)} columns to {args.out}")
    return 0


# -- discover -----------------------------------------------------------------


def _nsem_config_for(seed: int, n_vars: int, restarts: int) -> NsemConfig:
    if restarts < 1:  # auto: single restart once the variable count grows
        restarts = 1 if n_vars > 8 else 3
    return NsemConfig(seed=seed, restarts=restarts)


def cmd_discover(args: argparse.Namespace) -> int:
    if bool(args.scenario) == bool(args.data):
        args.parser.error("exactly one of --scenario or --data is required")
    try:
        generators = _parse_name_list(args.generators, METHOD_LABELS, "generator")
    except ValueError as exc:
        args.parser.error(str(exc))

    backend = None
    truth = None
    plan_overrides = None
    if args.scenario:
        spec = _load_scenario_or_usage(args, args.scenario)
        variables = spec.variables()
        constraints = spec.constraints()
        batch = simulate_batch(spec, args.n, args.seed)
        truth = spec.ground_truth()
        scenario_name = spec.name
        if not args.no_interventions:
            backend = SimulatorBackend(spec, seed=args.seed + BACKEND_SEED_OFFSET)
            plan_overrides = dict(SIMULATOR_WINDOWS)
    else:
        if not os.path.exists(args.data):
            args.parser.error(f"data file not found: {args.data}")
        batch = read_samples_csv(args.data)
        variables = _variables_from_batch(batch)
        constraints = StructuralConstraints(forbid_output_sources=True)
        scenario_name = None
        spec = None
        if args.ground_truth:
            with open(args.ground_truth, "r", encoding="utf-8") as fh:
                truth = DirectedGraph.from_json_dict(json.load(fh), template=variables)
    if args.stop_on_match and truth is None:
        args.parser.error("--stop-on-match needs a ground truth (--ground-truth)")

    cfg = LoopConfig(
        t_max=args.t_max,
        generators=generators,
        enable_ranking=not args.no_ranking,
        enable_llm_interventions=args.llm_interventions,
        enable_validation=backend is not None,
        enable_dataset_update=not args.no_dataset_update,
        ground_truth=truth,
        seed=args.seed,
    )
    needs_provider = "llm" in generators or args.llm_interventions
    provider = _make_provider(args.provider) if needs_provider else None
    report = run(
        batch,
        variables,
        cfg,
        backend=backend,
        provider=provider,
        constraints=constraints,
        nsem_config=_nsem_config_for(args.seed, len(variables), args.nsem_restarts),
        plan_overrides=plan_overrides,
    )

    os.makedirs(args.out_dir, exist_ok=True)
    manifest = RunManifest(
        command="discover",
        scenario=scenario_name,
        config_path=args.data or (None if args.scenario in SCENARIOS else args.scenario),
        seed=args.seed,
        out_dir=args.out_dir,
        generators=generators,
        provider=args.provider,
    ).to_json_dict()
    blob = {"manifest": manifest, "report": report_to_json(report, cfg)}
    write_json_atomic(os.path.join(args.out_dir, "report.json"), blob)
    write_json_atomic(
        os.path.join(args.out_dir, "graph.json"),
        {"manifest": manifest, "graph": report.final.to_json_dict()},
    )
    records = [rec for recs in report.records.values() for rec in recs]
    if records:
        lines = "".join(
            json.dumps(record_to_json(rec), sort_keys=True) + "\n" for rec in records
        )
        write_text_atomic(os.path.join(args.out_dir, "interventions.jsonl"), lines)

    msg = (
        f"terminated_by={report.terminated_by} iterations={len(report.trace)}"
        f" interventions={report.n_interventions} edges={len(report.final.edges)}"
    )
    if report.evaluation is not None:
        msg += f" f1={report.evaluation.f1:.3f} shd={report.evaluation.shd}"
    print(msg)
    return 0


# -- benchmark ----------------------------------------------------------------


def _bench_cell(payload: tuple) -> tuple[dict, str | None, dict | None]:
    """Run one scenario x method x seed cell; returns (key, error, row)."""
    scenario, method, seed, n, t_max, restarts, out_dir = payload
    key = {"scenario": scenario, "method": method, "seed": seed}
    try:
        spec = SCENARIOS[scenario]()
        batch = simulate_batch(spec, n, seed)
        validate = method != "obs"
        generators = METHOD_LABELS if method in ("full", "obs") else (method,)
        cfg = LoopConfig(
            t_max=t_max,
            generators=generators,
            enable_validation=validate,
            ground_truth=spec.ground_truth(),
            seed=seed,
        )
        backend = (
            SimulatorBackend(spec, seed=seed + BACKEND_SEED_OFFSET)
            if validate
            else None
        )
        report = run(
            batch,
            spec.variables(),
            cfg,
            backend=backend,
            constraints=spec.constraints(),
            nsem_config=_nsem_config_for(seed, spec.n_vars, restarts),
            plan_overrides=dict(SIMULATOR_WINDOWS) if validate else None,
        )
        ev = report.evaluation
        confusion = edge_confusion(spec.ground_truth(), report.final)
        if confusion.fp == 0:
            assert ev.cost == 0.0 and ev.risk == 0.0, (
                f"{key}: zero false positives must mean zero cost/risk,"
                f" got cost={ev.cost} risk={ev.risk}"
            )
        row = {
            "scenario": scenario,
            "method": method,
            "seed": seed,
            "precision": round(ev.precision, 6),
            "recall": round(ev.recall, 6),
            "f1": round(ev.f1, 6),
            "shd": ev.shd,
            "cost": round(ev.cost, 6),
            "risk": round(ev.risk, 6),
        }
        report_path = os.path.join(out_dir, "runs", f"{scenario}_{method}_{seed}.json")
        write_json_atomic(report_path, report_to_json(report, cfg))
        return key, None, row
    except Exception as exc:  # cell failures must not sink the grid
        return key, f"{type(exc).__name__}: {exc}", None


def cmd_benchmark(args: argparse.Namespace) -> int:
    try:
        scenarios = _parse_name_list(args.scenarios, tuple(SCENARIOS), "scenario")
        methods = _parse_name_list(args.methods, BENCHMARK_METHODS, "method")
        seeds = _parse_seeds(args.seeds)
    except ValueError as exc:
        args.parser.error(str(exc))
    if not seeds:
        args.parser.error("no seeds given")

    os.makedirs(os.path.join(args.out_dir, "runs"), exist_ok=True)
    cells = [
        (sc, m, sd, args.n, args.t_max, args.nsem_restarts, args.out_dir)
        for sc, m, sd in product(scenarios, methods, seeds)
    ]
    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            outcomes = list(pool.map(_bench_cell, cells))
    else:
        outcomes = [_bench_cell(cell) for cell in cells]

    rows = [row for _, err, row in outcomes if err is None and row is not None]
    failures = [dict(key, error=err) for key, err, _ in outcomes if err is not None]
    for key, err, _ in outcomes:
        if err is not None:
            print(f"cell failed {key}: {err}", file=sys.stderr)

    aggregates = []
    for sc, m in product(scenarios, methods):
        group = [r for r in rows if r["scenario"] == sc and r["method"] == m]
        if not group:
            continue
        agg = {"scenario": sc, "method": m, "seed": "median"}
        for col in ("precision", "recall", "f1", "shd", "cost", "risk"):
            agg[col] = round(statistics.median(r[col] for r in group), 6)
        aggregates.append(agg)

    manifest = RunManifest(
        command="benchmark",
        scenario=",".join(scenarios),
        config_path=None,
        seed=seeds[0],
        out_dir=args.out_dir,
        generators=methods,
        provider="mock",
    )
    csv_path = os.path.join(args.out_dir, "metrics.csv")
    fd, tmp = tempfile.mkstemp(dir=args.out_dir, suffix=".part")
    os.close(fd)
    try:
        write_metrics_csv(rows + aggregates, tmp)
        os.replace(tmp, csv_path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    _manifest_sidecar(csv_path, manifest)
    write_json_atomic(
        os.path.join(args.out_dir, "summary.json"),
        {
            "manifest": manifest.to_json_dict(),
            "seeds": seeds,
            "cells": len(cells),
            "completed": len(rows),
            "failures": failures,
        },
    )

    for agg in aggregates:
        print(
            f"{agg['scenario']:>9s} {agg['method']:>5s} median"
            f" f1={agg['f1']:.3f} shd={agg['shd']:g}"
            f" cost={agg['cost']:.3f} risk={agg['risk']:.3f}"
        )
    return 0 if rows else 1


# -- parser -------------------------------------------------------------------


def _add_common_run_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--seed", type=int, default=0, help="run seed")
    sub.add_argument("--n", type=int, default=6000, help="observational sample size")
    sub.add_argument("--t-max", type=int, default=60, help="iteration budget")
    sub.add_argument(
        "--nsem-restarts",
        type=int,
        default=0,
        help="gradient-fit restarts; 0 picks by problem size",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="buildcause",
        description="Causal structure discovery for building sensor systems.",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    sim = subs.add_parser("simulate", help="export an observational CSV")
    sim.add_argument("--scenario", required=True, help="scenario name or JSON path")
    sim.add_argument("--n", type=int, default=1000, help="rows to generate")
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--out", required=True, help="CSV output path")
    sim.set_defaults(func=cmd_simulate, parser=sim)

    disc = subs.add_parser("discover", help="run the discovery loop once")
    disc.add_argument("--scenario", help="scenario name or JSON path")
    disc.add_argument("--data", help="observational CSV (no interventions)")
    disc.add_argument("--ground-truth", help="graph JSON to score against")
    disc.add_argument(
        "--generators", default=",".join(METHOD_LABELS), help="comma-joined subset"
    )
    disc.add_argument("--provider", choices=("mock", "remote"), default="mock")
    disc.add_argument("--out-dir", default=".", help="artifact directory")
    disc.add_argument(
        "--no-interventions",
        action="store_true",
        help="observation-only even for a simulated scenario",
    )
    disc.add_argument("--no-ranking", action="store_true")
    disc.add_argument("--no-dataset-update", action="store_true")
    disc.add_argument(
        "--llm-interventions",
        action="store_true",
        help="let the provider pick intervention set-points",
    )
    disc.add_argument(
        "--stop-on-match",
        action="store_true",
        help="terminate when the graph matches the ground truth exactly",
    )
    _add_common_run_flags(disc)
    disc.set_defaults(func=cmd_discover, parser=disc)

    bench = subs.add_parser("benchmark", help="scenario x seed x method grid")
    bench.add_argument("--scenarios", default="base,noisy,hidden")
    bench.add_argument("--seeds", default="1..5", help="'1..5' or '1,3,9'")
    bench.add_argument(
        "--methods",
        default=",".join(BENCHMARK_METHODS),
        help="subset of " + ",".join(BENCHMARK_METHODS),
    )
    bench.add_argument("--out-dir", required=True)
    bench.add_argument("--workers", type=int, default=1, help="parallel cells")
    _add_common_run_flags(bench)
    bench.set_defaults(func=cmd_benchmark, parser=bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except SystemExit as exc:  # subparser.error inside command handlers
        return int(exc.code or 0)
    except PriorUnavailable as exc:
        print(f"error: language-model prior unavailable: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
