"""Intervention design, scheduled execution, and adjudication.

An edge (X_i, X_j) is probed by clamping X_i to a contrastive set-point and
watching X_j: each trial records a baseline window, a short do-window that is
extended when the early response clears a gate, and the standardized shift
delta = (post mean - pre mean) / baseline sd. The edge is Validated when any
of the n trials shows |delta| above epsilon (optionally a majority), Refuted
otherwise. A scheduler enforces actuation caps and spacing so the same code
path can drive real equipment. Post-window rows are re-emitted as weighted
pseudo-samples for the next learning round.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .consensus import EdgeStatus
from .graph import Variable
from .llm import (
    MockProvider,
    PromptSpec,
    TransportError,
    extract_json_object,
)
from .simulate import NotIntervenable, Sample

DAY_STEPS = 86400
ENERGY_VAR = "EnergyConsumption"
SATISFACTION_VAR = "OverallSatisfaction"
PSEUDO_SAMPLE_WEIGHT = 2.0
PSEUDO_SAMPLES_PER_TRIAL = 20


class CapExceeded(RuntimeError):
    """Daily actuation budget is spent."""


class SpacingViolation(RuntimeError):
    """Next intervention would start too soon after the previous one."""


@dataclass(frozen=True)
class InterventionPlan:
    """What to clamp, to what value, and under which adjudication protocol.

    ``target_value`` is validated against the source variable's bounds at
    design time; the backend re-checks on execution. Window lengths are repo
    defaults, overridden per scenario config.
    """

    edge: tuple[int, int]
    target_value: float
    n_trials: int = 3
    t_short: int = 20
    t_long: int = 60
    t_baseline: int = 20
    delta_gate: float = 0.05
    epsilon: float = 0.1
    min_spacing: int = 300
    daily_cap: int = 1000
    stabilization: int = 600

    def __post_init__(self) -> None:
        if self.n_trials < 1:
            raise ValueError("need at least one trial")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.delta_gate < 0:
            raise ValueError("delta gate must be nonnegative")
        if min(self.t_short, self.t_baseline) < 2:
            raise ValueError("baseline and short windows need at least 2 steps")
        if self.t_long < self.t_short:
            raise ValueError("t_long must be at least t_short")
        if self.min_spacing < 0 or self.daily_cap < 1 or self.stabilization < 0:
            raise ValueError("scheduling fields out of range")


@dataclass(frozen=True)
class TrialResult:
    pre_mean: float
    post_mean: float
    baseline_sd: float
    effect_size: float
    delta: float
    extended: bool = False

    def __post_init__(self) -> None:
        if self.baseline_sd > 0:
            expected = abs(self.post_mean - self.pre_mean) / self.baseline_sd
            if not math.isclose(self.effect_size, expected, rel_tol=1e-9):
                raise ValueError("effect_size inconsistent with means and sd")
        elif self.effect_size != 0.0:
            raise ValueError("zero baseline sd forces zero effect size")


@dataclass(frozen=True)
class InterventionRecord:
    plan: InterventionPlan
    trial_results: tuple[TrialResult, ...]
    verdict: EdgeStatus
    satisfaction_loss: float
    energy_increase: float
    cohens_d: float
    post_samples: tuple[Sample, ...] = ()

    def __post_init__(self) -> None:
        if self.verdict not in (EdgeStatus.VALIDATED, EdgeStatus.REFUTED):
            raise ValueError("verdict must be Validated or Refuted")
        if self.satisfaction_loss < 0 or self.energy_increase < 0:
            raise ValueError("loss terms are nonnegative by construction")


@dataclass
class Scheduler:
    """Step-clock actuation budget: at most ``daily_cap`` intervention starts
    per simulated day, separated by ``min_spacing`` steps."""

    daily_cap: int = 1000
    min_spacing: int = 300
    now: int = 0
    _day_counts: dict = field(default_factory=dict)
    _last_start: int | None = None

    def advance(self, steps: int) -> None:
        self.now += int(steps)

    def record_start(self) -> None:
        if self._last_start is not None:
            if self.now - self._last_start < self.min_spacing:
                raise SpacingViolation(
                    f"{self.now - self._last_start} < {self.min_spacing} steps"
                )
        day = self.now // DAY_STEPS
        if self._day_counts.get(day, 0) >= self.daily_cap:
            raise CapExceeded(f"day {day} already used {self.daily_cap} starts")
        self._day_counts[day] = self._day_counts.get(day, 0) + 1
        self._last_start = self.now


def _value_prompt(var: Variable, baseline_mean: float, model: str) -> PromptSpec:
    low, high = var.bounds
    system = (
        "You choose set-points for controlled experiments in a building "
        "automation system.\n"
        "Return your answer as a JSON object with this format exactly:\n"
        '{"value": <number>}'
    )
    user = (
        f"Propose a set-point for a do-intervention on {var.name} "
        f"(units: {var.unit}).\n"
        f"Current baseline mean: {baseline_mean:.2f}. "
        f"Allowed range: [{low:g}, {high:g}].\n"
        "Pick a value inside the range that maximizes contrast with the "
        "baseline."
    )
    return PromptSpec(system, user, model)


def _elicit_value(
    provider,
    var: Variable,
    baseline_mean: float,
    model: str,
    sleep: Callable[[float], None],
) -> float | None:
    prompt = _value_prompt(var, baseline_mean, model)
    delay = prompt.base_backoff
    for attempt in range(prompt.max_retries + 1):
        if attempt:
            sleep(delay)
            delay *= 2.0
        try:
            text = provider.respond(prompt, (var,))
            return float(extract_json_object(text)["value"])
        except (TransportError, ValueError, KeyError, TypeError):
            continue
    return None


def design_intervention(
    edge: tuple[int, int],
    variables: Sequence[Variable],
    baseline_mean: float,
    provider=None,
    model: str = "gpt-3.5-turbo",
    sleep: Callable[[float], None] = time.sleep,
    **plan_overrides,
) -> InterventionPlan:
    """Pick the clamp value for the edge's source and assemble a plan.

    A remote provider may propose the set-point (clamped into bounds); the
    offline provider, or any elicitation failure, falls back to the bound
    farther from the baseline mean for maximal contrast.
    """
    i, _ = edge
    src = variables[i]
    if not src.intervenable:
        raise NotIntervenable(f"{src.name} is an output and cannot be clamped")
    low, high = src.bounds
    proposal: float | None = None
    if provider is not None and not isinstance(provider, MockProvider):
        proposal = _elicit_value(provider, src, baseline_mean, model, sleep)
    if proposal is None or not math.isfinite(proposal):
        proposal = high if abs(high - baseline_mean) >= abs(low - baseline_mean) else low
    target = float(min(max(proposal, low), high))
    return InterventionPlan(edge=edge, target_value=target, **plan_overrides)


def _phase_stats(rows: np.ndarray, col: int) -> tuple[float, float]:
    series = rows[:, col]
    sd = float(np.std(series, ddof=1)) if len(series) > 1 else 0.0
    return float(np.mean(series)), sd


def _thin_rows(rows: np.ndarray, keep: int) -> np.ndarray:
    stride = max(1, rows.shape[0] // keep)
    return rows[::stride][:keep] if rows.shape[0] > keep else rows


def execute(
    plan: InterventionPlan,
    backend,
    scheduler: Scheduler | None = None,
    majority_vote: bool = False,
) -> InterventionRecord:
    """Run the trial protocol on the backend and adjudicate the edge."""
    names = list(backend.variable_names)
    i, j = plan.edge
    src_name = names[i]
    col_e = names.index(ENERGY_VAR) if ENERGY_VAR in names else None
    col_s = names.index(SATISFACTION_VAR) if SATISFACTION_VAR in names else None
    if scheduler is None:
        scheduler = Scheduler(daily_cap=plan.daily_cap, min_spacing=plan.min_spacing)

    trials = []
    pre_pool: list[np.ndarray] = []
    post_pool: list[np.ndarray] = []
    pre_es: list[tuple[float, float]] = []
    post_es: list[tuple[float, float]] = []
    pseudo: list[Sample] = []

    for _ in range(plan.n_trials):
        scheduler.record_start()
        pre = backend.step(plan.t_baseline)
        scheduler.advance(plan.t_baseline)
        pre_mean, baseline_sd = _phase_stats(pre, j)

        backend.do(src_name, plan.target_value)
        post = backend.step(plan.t_short)
        scheduler.advance(plan.t_short)
        extended = False
        if baseline_sd > 0 and plan.t_long > plan.t_short:
            short_shift = abs(float(np.mean(post[:, j])) - pre_mean) / baseline_sd
            if short_shift > plan.delta_gate:
                extra = backend.step(plan.t_long - plan.t_short)
                scheduler.advance(plan.t_long - plan.t_short)
                post = np.vstack([post, extra])
                extended = True
        backend.do(src_name, None)
        if plan.stabilization:
            backend.step(plan.stabilization)
            scheduler.advance(plan.stabilization)

        post_mean = float(np.mean(post[:, j]))
        if baseline_sd > 0:
            delta = (post_mean - pre_mean) / baseline_sd
        else:
            delta = 0.0
        trials.append(
            TrialResult(
                pre_mean=pre_mean,
                post_mean=post_mean,
                baseline_sd=baseline_sd,
                effect_size=abs(delta),
                delta=delta,
                extended=extended,
            )
        )
        pre_pool.append(pre[:, j])
        post_pool.append(post[:, j])
        if col_e is not None and col_s is not None:
            pre_es.append((float(np.mean(pre[:, col_e])), float(np.mean(pre[:, col_s]))))
            post_es.append((float(np.mean(post[:, col_e])), float(np.mean(post[:, col_s]))))
        for row in _thin_rows(post, PSEUDO_SAMPLES_PER_TRIAL):
            pseudo.append(
                Sample(
                    dict(zip(names, map(float, row))),
                    PSEUDO_SAMPLE_WEIGHT,
                    (src_name, float(plan.target_value)),
                )
            )

    hits = sum(1 for t in trials if abs(t.delta) > plan.epsilon)
    if majority_vote:
        validated = hits * 2 > plan.n_trials
    else:
        validated = hits >= 1

    if pre_es:
        e_pre = float(np.mean([x[0] for x in pre_es]))
        s_pre = float(np.mean([x[1] for x in pre_es]))
        e_post = float(np.mean([x[0] for x in post_es]))
        s_post = float(np.mean([x[1] for x in post_es]))
        s_loss = max(0.0, (s_pre - s_post) / s_pre) if s_pre > 0 else 0.0
        e_gain = max(0.0, (e_post - e_pre) / e_pre) if e_pre > 0 else 0.0
    else:
        s_loss = e_gain = 0.0

    return InterventionRecord(
        plan=plan,
        trial_results=tuple(trials),
        verdict=EdgeStatus.VALIDATED if validated else EdgeStatus.REFUTED,
        satisfaction_loss=s_loss,
        energy_increase=e_gain,
        cohens_d=_pooled_cohens_d(np.concatenate(pre_pool), np.concatenate(post_pool)),
        post_samples=tuple(pseudo),
    )


def _pooled_cohens_d(pre: np.ndarray, post: np.ndarray) -> float:
    n1, n2 = len(pre), len(post)
    if n1 < 2 or n2 < 2:
        return 0.0
    s1 = np.var(pre, ddof=1)
    s2 = np.var(post, ddof=1)
    pooled = math.sqrt(((n1 - 1) * s1 + (n2 - 1) * s2) / (n1 + n2 - 2))
    if pooled == 0.0:
        return 0.0
    return float((np.mean(post) - np.mean(pre)) / pooled)


def to_pseudo_samples(record: InterventionRecord) -> list[Sample]:
    """Post-phase rows as weight-2.0 interventional samples."""
    if not record.trial_results:
        raise ValueError("record has no trials")
    return list(record.post_samples)


def record_to_json(record: InterventionRecord) -> dict:
    """Loggable summary (raw sample payload excluded)."""
    return {
        "edge": list(record.plan.edge),
        "target_value": record.plan.target_value,
        "n_trials": record.plan.n_trials,
        "epsilon": record.plan.epsilon,
        "trials": [
            {
                "pre_mean": t.pre_mean,
                "post_mean": t.post_mean,
                "baseline_sd": t.baseline_sd,
                "effect_size": t.effect_size,
                "delta": t.delta,
                "extended": t.extended,
            }
            for t in record.trial_results
        ],
        "verdict": record.verdict.value,
        "satisfaction_loss": record.satisfaction_loss,
        "energy_increase": record.energy_increase,
        "cohens_d": record.cohens_d,
    }


def append_record_log(path, record: InterventionRecord) -> None:
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(record_to_json(record)) + "\n")


# window lengths giving stable adjudication statistics on the simulator:
# long windows swamp the AR transients, and the unextended short window's
# gate (0.05) is tighter than epsilon so null edges never validate early
SIMULATOR_WINDOWS = {
    "t_baseline": 3000,
    "t_short": 1500,
    "t_long": 3000,
    "stabilization": 600,
}
