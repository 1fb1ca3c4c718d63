"""Structural-equation simulator with do-operator semantics.

Exogenous drivers evolve as (optionally zone-coupled) mean-reverting chains;
outputs are static functions of the current physical values plus noise.
Interventions clamp a variable's physical value, severing its own dynamics
while downstream equations keep reading the clamped value. Latent chains feed
dynamics; output equations consume physical (bound-clipped, possibly clamped)
values; measurement noise touches recorded values only, so actuation stays
precise while sensors stay noisy.

Windows of any length produce identical trajectories for a given seed because
every random stream is consumed strictly sequentially.
"""

from __future__ import annotations

import copy
import csv
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.signal import lfilter

from .scenario import ScenarioSpec


class OutOfBounds(ValueError):
    """Intervention value lies outside the variable's declared bounds."""


class NotIntervenable(ValueError):
    """Intervention target is an output variable."""


# -- samples --------------------------------------------------------------------


@dataclass(frozen=True)
class Sample:
    """One observation row: named values, an importance weight, and the regime
    it was drawn under (observational, or under do(var = value))."""

    values: dict[str, float]
    weight: float = 1.0
    intervention: tuple[str, float] | None = None

    def __post_init__(self) -> None:
        if not self.weight > 0:
            raise ValueError(f"sample weight must be positive, got {self.weight}")

    @property
    def regime_label(self) -> str:
        if self.intervention is None:
            return "obs"
        var, value = self.intervention
        return f"do:{var}={value:g}"


def parse_regime(label: str) -> tuple[str, float] | None:
    if label == "obs":
        return None
    if label.startswith("do:") and "=" in label:
        var, raw = label[3:].split("=", 1)
        return (var, float(raw))
    raise ValueError(f"unrecognized regime label {label!r}")


@dataclass
class SampleBatch:
    """Column-aligned matrix view over a list of samples."""

    names: tuple[str, ...]
    values: np.ndarray
    weights: np.ndarray
    interventions: tuple[tuple[str, float] | None, ...]

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        if self.values.ndim != 2 or self.values.shape[1] != len(self.names):
            raise ValueError("values must be (n_rows, n_names)")
        if self.weights.shape != (self.values.shape[0],):
            raise ValueError("weights must align with rows")
        if len(self.interventions) != self.values.shape[0]:
            raise ValueError("interventions must align with rows")
        if not (self.weights > 0).all():
            raise ValueError("weights must be positive")

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.names.index(name)]

    @classmethod
    def from_samples(cls, samples: Sequence[Sample]) -> "SampleBatch":
        if not samples:
            raise ValueError("empty sample list")
        names = tuple(samples[0].values.keys())
        values = np.array([[s.values[k] for k in names] for s in samples])
        weights = np.array([s.weight for s in samples])
        return cls(names, values, weights, tuple(s.intervention for s in samples))

    def to_samples(self) -> list[Sample]:
        return [
            Sample(dict(zip(self.names, row)), w, iv)
            for row, w, iv in zip(self.values, self.weights, self.interventions)
        ]

    def concat(self, other: "SampleBatch") -> "SampleBatch":
        if other.names != self.names:
            raise ValueError("cannot concatenate batches with different columns")
        return SampleBatch(
            self.names,
            np.vstack([self.values, other.values]),
            np.concatenate([self.weights, other.weights]),
            self.interventions + other.interventions,
        )


def write_samples_csv(data: SampleBatch | Sequence[Sample], path: str) -> None:
    batch = data if isinstance(data, SampleBatch) else SampleBatch.from_samples(list(data))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(batch.names) + ["weight", "regime"])
        for row, w, iv in zip(batch.values, batch.weights, batch.interventions):
            label = "obs" if iv is None else f"do:{iv[0]}={iv[1]:g}"
            writer.writerow([repr(float(x)) for x in row] + [repr(float(w)), label])


def read_samples_csv(path: str) -> SampleBatch:
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[-2:] == ["weight", "regime"]:
            names = tuple(header[:-2])
            tagged = True
        else:
            names = tuple(header)
            tagged = False
        values, weights, ivs = [], [], []
        for row in reader:
            if not row:
                continue
            k = len(names)
            values.append([float(x) for x in row[:k]])
            weights.append(float(row[k]) if tagged else 1.0)
            ivs.append(parse_regime(row[k + 1]) if tagged else None)
    return SampleBatch(names, np.array(values), np.array(weights), tuple(ivs))


# -- simulator state ------------------------------------------------------------


@dataclass
class SimState:
    """Mutable simulator state; functional ops copy before mutating."""

    seed: int
    step_index: int
    temp: np.ndarray
    hum: np.ndarray
    aq: float
    occupied: int
    hvac_eff: float
    outdoor_phase: float
    do_values: dict[str, float] = field(default_factory=dict)
    rngs: dict[str, np.random.Generator] = field(default_factory=dict)
    last_obs: np.ndarray | None = None

    def copy(self) -> "SimState":
        return copy.deepcopy(self)

    @property
    def hidden_states(self) -> dict[str, float]:
        return {
            "hvac_efficiency": self.hvac_eff,
            "occupancy": float(self.occupied),
            "outdoor_phase": self.outdoor_phase,
        }


def init_state(
    spec: ScenarioSpec,
    seed: int | np.random.SeedSequence,
    zone_seeds: Sequence[np.random.SeedSequence] | None = None,
    building_seed: np.random.SeedSequence | None = None,
) -> SimState:
    """Build a stationary initial state.

    Every zone draws from its own child stream and measurement noise from a
    further sub-stream, so zone trajectories depend only on the zone's seed,
    not on how many zones or sensors the scenario carries. ``zone_seeds`` and
    ``building_seed`` allow cross-scenario stream alignment.
    """
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    children = ss.spawn(spec.zones + 1)
    if zone_seeds is None:
        zone_seeds = children[: spec.zones]
    if building_seed is None:
        building_seed = children[spec.zones]

    rngs: dict[str, np.random.Generator] = {}
    for z, zss in enumerate(zone_seeds):
        dyn, meas = zss.spawn(2)
        rngs[f"zone{z}:dyn"] = np.random.default_rng(dyn)
        rngs[f"zone{z}:meas"] = np.random.default_rng(meas)
    aq_dyn, aq_meas, out_noise, hidden = building_seed.spawn(4)
    rngs["aq:dyn"] = np.random.default_rng(aq_dyn)
    rngs["aq:meas"] = np.random.default_rng(aq_meas)
    rngs["building:noise"] = np.random.default_rng(out_noise)
    rngs["building:hidden"] = np.random.default_rng(hidden)

    temp = np.empty(spec.zones)
    hum = np.empty(spec.zones)
    for z in range(spec.zones):
        start = rngs[f"zone{z}:dyn"].standard_normal(2)
        temp[z] = spec.temperature.mean + spec.temperature.sd * start[0]
        hum[z] = spec.humidity.mean + spec.humidity.sd * start[1]
    aq = spec.air_quality.mean + spec.air_quality.sd * float(
        rngs["aq:dyn"].standard_normal()
    )

    hvac_eff, outdoor_phase, occupied = 1.0, 0.0, 0
    hrng = rngs["building:hidden"]
    for h in spec.hidden_vars:
        if h.kind == "beta_efficiency":
            hvac_eff = max(h.param("floor"), float(hrng.beta(h.param("a"), h.param("b"))))
        elif h.kind == "sine_drift":
            outdoor_phase = float(hrng.uniform(0.0, 2.0 * math.pi))
        elif h.kind == "markov_load":
            occupied = int(hrng.integers(0, 2))

    seed_val = ss.entropy if isinstance(ss.entropy, int) else 0
    return SimState(
        seed=int(seed_val) & 0xFFFFFFFF,
        step_index=0,
        temp=temp,
        hum=hum,
        aq=float(aq),
        occupied=occupied,
        hvac_eff=hvac_eff,
        outdoor_phase=outdoor_phase,
        rngs=rngs,
    )


def _var_slot(spec: ScenarioSpec, name: str) -> tuple[str, int]:
    """Map a variable name to its (block, zone index) slot."""
    names = spec.variable_names()
    if name not in names:
        raise KeyError(f"unknown variable {name!r}")
    k = names.index(name)
    z = spec.zones
    if k < z:
        return ("temp", k)
    if k < 2 * z:
        return ("hum", k - z)
    if names[k] == "AirQuality":
        return ("aq", 0)
    return ("output", k)


def set_do(state: SimState, spec: ScenarioSpec, name: str, value: float | None) -> None:
    """Install or clear a clamp on the named variable, in place."""
    if value is None:
        state.do_values.pop(name, None)
        return
    variables = {v.name: v for v in spec.variables()}
    if name not in variables:
        raise KeyError(f"unknown variable {name!r}")
    var = variables[name]
    if not var.intervenable:
        raise NotIntervenable(f"{name} is an output and cannot be actuated")
    low, high = var.bounds
    if not (low <= value <= high):
        raise OutOfBounds(f"do({name}={value}) outside bounds [{low}, {high}]")
    state.do_values[name] = float(value)
    block, z = _var_slot(spec, name)
    if block == "temp":
        state.temp[z] = value
    elif block == "hum":
        state.hum[z] = value
    else:
        state.aq = value


def apply_do(
    state: SimState, spec: ScenarioSpec, name: str, value: float | None
) -> SimState:
    """Functional clamp: returns a new state with the intervention applied and
    the current observation re-evaluated under it."""
    new = state.copy()
    set_do(new, spec, name, value)
    new.last_obs = _instant_row(spec, new)
    return new


# -- dynamics -------------------------------------------------------------------


def _coupling_matrix(spec: ScenarioSpec, rho: float, c: float) -> np.ndarray:
    z = spec.zones
    m = rho * np.eye(z)
    if c:
        for a, b in spec.zone_adjacency:
            m[a, b] += c
            m[b, a] += c
            m[a, a] -= c
            m[b, b] -= c
    return m


def _evolve_modes(m_red: np.ndarray, x0_rel: np.ndarray, drive: np.ndarray) -> np.ndarray:
    """Run x(t) = M x(t-1) + drive(t) for t = 1..n via eigenmode filtering.

    M must be symmetric. Returns the (n, k) state series, relative to mean.
    """
    lam, q = np.linalg.eigh(m_red)
    u = drive @ q
    y0 = q.T @ x0_rel
    y = np.empty_like(u)
    for i in range(lam.size):
        y[:, i] = lfilter([1.0], [1.0, -lam[i]], u[:, i], zi=[lam[i] * y0[i]])[0]
    return y @ q.T


def _evolve_block(
    proc, m_full: np.ndarray, x0: np.ndarray, eta: np.ndarray, extra_drive: np.ndarray | None,
    clamps: dict[int, float],
) -> np.ndarray:
    """Advance one coupled block for a window, honouring per-zone clamps."""
    n, z = eta.shape
    out = np.empty((n, z))
    free = [k for k in range(z) if k not in clamps]
    for k, v in clamps.items():
        out[:, k] = v
    if not free:
        return out
    fidx = np.array(free)
    m_ff = m_full[np.ix_(fidx, fidx)]
    drive = eta[:, fidx].copy()
    if extra_drive is not None:
        drive += extra_drive[:, fidx]
    if clamps:
        cidx = np.array(sorted(clamps))
        v_rel = np.array([clamps[k] for k in sorted(clamps)]) - proc.mean
        drive += m_full[np.ix_(fidx, cidx)] @ v_rel
    x0_rel = x0[fidx] - proc.mean
    out[:, fidx] = proc.mean + _evolve_modes(m_ff, x0_rel, drive)
    return out


def run_window(spec: ScenarioSpec, state: SimState, n: int) -> np.ndarray:
    """Advance the simulator n steps; returns observed rows in variable order."""
    if n < 1:
        raise ValueError("window length must be >= 1")
    z = spec.zones
    tp, hp, ap = spec.temperature, spec.humidity, spec.air_quality

    zdraws = [state.rngs[f"zone{k}:dyn"].standard_normal((n, 2)) for k in range(z)]
    aq_eta = state.rngs["aq:dyn"].standard_normal(n) * ap.sd * math.sqrt(1 - ap.rho**2)
    out_eps = state.rngs["building:noise"].standard_normal((n, 2))

    occ_spec = spec.hidden("markov_load")
    if occ_spec is not None:
        flips = state.rngs["building:hidden"].uniform(size=n) < occ_spec.param("p_flip")
        occ = (state.occupied + np.cumsum(flips)) % 2
    else:
        occ = np.zeros(n)

    steps = state.step_index + 1 + np.arange(n)

    clamps = {"temp": {}, "hum": {}}
    aq_clamp: float | None = None
    for name, v in state.do_values.items():
        block, k = _var_slot(spec, name)
        if block == "aq":
            aq_clamp = v
        else:
            clamps[block][k] = v

    # temperature block, with optional sinusoidal outdoor forcing
    t_eta = np.column_stack([zdraws[k][:, 0] for k in range(z)]) * (
        tp.sd * math.sqrt(1 - tp.rho**2)
    )
    forcing = None
    sine = spec.hidden("sine_drift")
    if sine is not None:
        wave = sine.param("amplitude") * np.sin(
            2 * math.pi * steps / sine.param("period") + state.outdoor_phase
        )
        forcing = np.repeat(wave[:, None], z, axis=1)
    m_t = _coupling_matrix(spec, tp.rho, tp.coupling)
    temp = _evolve_block(tp, m_t, state.temp, t_eta, forcing, clamps["temp"])
    temp_prev = np.vstack([state.temp, temp[:-1]])

    # humidity block; in extended mode temperature drives humidity
    h_eta = np.column_stack([zdraws[k][:, 1] for k in range(z)]) * (
        hp.sd * math.sqrt(1 - hp.rho**2)
    )
    h_extra = None
    if spec.extended_truth:
        h_extra = spec.extended_th * (temp_prev - tp.mean)
    m_h = _coupling_matrix(spec, hp.rho, hp.coupling)
    hum = _evolve_block(hp, m_h, state.hum, h_eta, h_extra, clamps["hum"])
    hum_prev = np.vstack([state.hum, hum[:-1]])

    # air quality scalar; in extended mode humidity drives it
    if aq_clamp is not None:
        aq_phys = np.full(n, aq_clamp)
        aq_latent_last = aq_clamp
    else:
        drive = aq_eta.copy()
        if spec.extended_truth:
            drive += spec.extended_haq * (hum_prev[:, 0] - hp.mean)
        series = _evolve_modes(
            np.array([[ap.rho]]), np.array([state.aq - ap.mean]), drive[:, None]
        )[:, 0]
        aq_latent = ap.mean + series
        aq_latent_last = float(aq_latent[-1])
        aq_load = occ_spec.param("aq_load") if occ_spec is not None else 0.0
        aq_phys = np.clip(aq_latent + occ * aq_load, *ap.bounds)

    t_phys = np.clip(temp, *tp.bounds)
    h_phys = np.clip(hum, *hp.bounds)
    for k, v in clamps["temp"].items():
        t_phys[:, k] = v
    for k, v in clamps["hum"].items():
        h_phys[:, k] = v

    # outputs: conditioning load and comfort
    en, sat = spec.energy, spec.satisfaction
    load = (
        en.base_load
        + en.zone_scale
        * (
            en.temp_coef * np.abs(t_phys - en.temp_setpoint)
            + en.hum_coef * np.abs(h_phys - en.hum_setpoint) / en.hum_scale
        ).sum(axis=1)
        + en.aq_coef * aq_phys / en.aq_scale
    )
    e_load = occ_spec.param("energy_load") if occ_spec is not None else 0.0
    energy = np.clip(
        load / state.hvac_eff + occ * e_load + out_eps[:, 0] * en.noise_sd, *en.bounds
    )
    cm = sat.comfort
    pmv = (
        cm.temp_slope * (t_phys - cm.temp_ref)
        + cm.hum_slope * (h_phys - cm.hum_ref)
    ).mean(axis=1)
    ppd = 1.0 / (1.0 + np.exp(-cm.steepness * (np.abs(pmv) - cm.midpoint)))
    satisfaction = np.clip(
        100.0 * (1.0 - ppd) - sat.energy_penalty * load + out_eps[:, 1] * sat.noise_sd,
        *sat.bounds,
    )

    # measurement layer: sensors are noisy, actuation stays exact physically
    obs_t, obs_h, obs_aq = t_phys.copy(), h_phys.copy(), aq_phys.copy()
    sd_t = spec.measurement_sd_for("Temperature")
    sd_h = spec.measurement_sd_for("Humidity")
    if sd_t > 0 or sd_h > 0:
        for k in range(z):
            meas = state.rngs[f"zone{k}:meas"].standard_normal((n, 2))
            if sd_t > 0:
                obs_t[:, k] = np.clip(t_phys[:, k] + meas[:, 0] * sd_t, *tp.bounds)
            if sd_h > 0:
                obs_h[:, k] = np.clip(h_phys[:, k] + meas[:, 1] * sd_h, *hp.bounds)
    sd_aq = spec.measurement_sd_for("AirQuality")
    if sd_aq > 0:
        obs_aq = np.clip(
            aq_phys + state.rngs["aq:meas"].standard_normal(n) * sd_aq, *ap.bounds
        )

    out = np.column_stack([obs_t, obs_h, obs_aq, energy, satisfaction])

    state.temp = temp[-1].copy()
    state.hum = hum[-1].copy()
    state.aq = aq_latent_last
    state.occupied = int(occ[-1])
    state.step_index += n
    state.last_obs = out[-1].copy()
    return out


def _instant_row(spec: ScenarioSpec, state: SimState) -> np.ndarray:
    """Noise-free readout of the current state (no step, no rng draws)."""
    z = spec.zones
    t_phys = np.clip(state.temp, *spec.temperature.bounds)
    h_phys = np.clip(state.hum, *spec.humidity.bounds)
    occ_spec = spec.hidden("markov_load")
    aq_load = occ_spec.param("aq_load") if occ_spec is not None else 0.0
    aq_phys = float(np.clip(state.aq + state.occupied * aq_load, *spec.air_quality.bounds))
    if "AirQuality" in state.do_values:
        aq_phys = state.do_values["AirQuality"]
    en, sat = spec.energy, spec.satisfaction
    load = (
        en.base_load
        + en.zone_scale
        * (
            en.temp_coef * np.abs(t_phys - en.temp_setpoint)
            + en.hum_coef * np.abs(h_phys - en.hum_setpoint) / en.hum_scale
        ).sum()
        + en.aq_coef * aq_phys / en.aq_scale
    )
    e_load = occ_spec.param("energy_load") if occ_spec is not None else 0.0
    energy = float(np.clip(load / state.hvac_eff + state.occupied * e_load, *en.bounds))
    cm = sat.comfort
    pmv = float(
        (
            cm.temp_slope * (t_phys - cm.temp_ref)
            + cm.hum_slope * (h_phys - cm.hum_ref)
        ).mean()
    )
    ppd = 1.0 / (1.0 + math.exp(-cm.steepness * (abs(pmv) - cm.midpoint)))
    satisfaction = float(
        np.clip(100.0 * (1.0 - ppd) - sat.energy_penalty * load, *sat.bounds)
    )
    return np.concatenate([t_phys, h_phys, [aq_phys, energy, satisfaction]])


def observe(spec: ScenarioSpec, state: SimState) -> dict[str, float]:
    row = state.last_obs if state.last_obs is not None else _instant_row(spec, state)
    return dict(zip(spec.variable_names(), (float(x) for x in row)))


def step(spec: ScenarioSpec, state: SimState) -> dict[str, float]:
    row = run_window(spec, state, 1)[0]
    return dict(zip(spec.variable_names(), (float(x) for x in row)))


def simulate_batch(
    spec: ScenarioSpec, n: int, seed: int | np.random.SeedSequence
) -> SampleBatch:
    state = init_state(spec, seed)
    values = run_window(spec, state, n)
    return SampleBatch(
        spec.variable_names(), values, np.ones(n), tuple([None] * n)
    )


def generate_observational(
    spec: ScenarioSpec, n: int, seed: int | np.random.SeedSequence
) -> list[Sample]:
    """n weighted observational samples from a fresh, seeded trajectory."""
    return simulate_batch(spec, n, seed).to_samples()


def run_intervention_trial(
    spec: ScenarioSpec,
    state: SimState,
    name: str,
    value: float,
    t_baseline: int,
    t_hold: int,
) -> dict[str, list[Sample]]:
    """Baseline window, then a clamped window; clears the clamp afterwards."""
    if t_baseline < 2 or t_hold < 2:
        raise ValueError("baseline and hold windows need at least 2 steps")
    names = spec.variable_names()
    pre = run_window(spec, state, t_baseline)
    set_do(state, spec, name, value)
    post = run_window(spec, state, t_hold)
    set_do(state, spec, name, None)

    def mk(row, iv):
        return Sample(dict(zip(names, map(float, row))), 1.0, iv)

    return {
        "pre": [mk(r, None) for r in pre],
        "post": [mk(r, (name, float(value))) for r in post],
    }


# -- execution backend ------------------------------------------------------------


class SimulatorBackend:
    """Step/do/observe/reset interface over the simulator, so hardware
    executors can substitute for it behind the same contract."""

    def __init__(self, spec: ScenarioSpec, seed: int | np.random.SeedSequence):
        self.spec = spec
        self.reset(seed)

    def reset(self, seed: int | np.random.SeedSequence) -> None:
        self.state = init_state(self.spec, seed)

    def step(self, n: int = 1) -> np.ndarray:
        return run_window(self.spec, self.state, n)

    def do(self, name: str, value: float | None = None) -> None:
        set_do(self.state, self.spec, name, value)

    def observe(self) -> dict[str, float]:
        return observe(self.spec, self.state)

    @property
    def variables(self):
        return self.spec.variables()

    @property
    def variable_names(self) -> tuple[str, ...]:
        return self.spec.variable_names()
