"""Controlled-scenario definitions for the simulated room environments.

A ScenarioSpec fixes variable declarations, exogenous dynamics, output
equations, hidden confounders, measurement noise, and the ground-truth graph.
Node order follows declaration order: per-zone temperatures, per-zone
humidities, air quality, energy, satisfaction.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace

from .graph import DirectedGraph, StructuralConstraints, Variable, VarKind


@dataclass(frozen=True)
class ArProcess:
    """Mean-reverting exogenous driver, one value per zone.

    x(t+1) = mean + rho * (x(t) - mean) + coupling * sum_adj (x_adj - x) + noise
    with innovation sd chosen so the uncoupled marginal sd equals ``sd``.
    """

    mean: float
    sd: float
    rho: float
    bounds: tuple[float, float]
    coupling: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.rho < 1.0:
            raise ValueError("rho must lie in [0, 1)")
        if self.sd <= 0:
            raise ValueError("sd must be positive")


@dataclass(frozen=True)
class ComfortModel:
    """Thermal comfort vote, linear in temperature and humidity, and the
    logistic discomfort fraction it induces."""

    temp_slope: float = 0.25
    temp_ref: float = 24.0
    hum_slope: float = 0.015
    hum_ref: float = 50.0
    steepness: float = 2.0
    midpoint: float = 1.5


@dataclass(frozen=True)
class EnergyModel:
    """Deterministic conditioning load plus observation noise.

    load = base + sum_z zone_scale * (temp_coef * |T_z - temp_setpoint|
           + hum_coef * |H_z - hum_setpoint| / hum_scale)
           + aq_coef * AQ / aq_scale
    """

    base_load: float = 5.0
    temp_coef: float = 3.0
    temp_setpoint: float = 22.0
    hum_coef: float = 20.0
    hum_setpoint: float = 50.0
    hum_scale: float = 20.0
    aq_coef: float = 30.0
    aq_scale: float = 500.0
    zone_scale: float = 1.0
    noise_sd: float = 3.0
    bounds: tuple[float, float] = (0.0, 100.0)


@dataclass(frozen=True)
class SatisfactionModel:
    """Satisfaction = 100 * (1 - discomfort) - energy_penalty * load + noise."""

    comfort: ComfortModel = field(default_factory=ComfortModel)
    energy_penalty: float = 0.8
    noise_sd: float = 3.0
    bounds: tuple[float, float] = (0.0, 100.0)


@dataclass(frozen=True)
class HiddenVar:
    """Latent process unobserved by discovery but wired into the equations.

    kind is one of:
      beta_efficiency - per-run Beta(a, b) efficiency dividing the energy load
      markov_load     - two-state occupancy chain adding load to energy and AQ
      sine_drift      - sinusoidal outdoor forcing on zone temperatures
    """

    name: str
    kind: str
    params: tuple[tuple[str, float], ...]

    def param(self, key: str) -> float:
        for k, v in self.params:
            if k == key:
                return v
        raise KeyError(f"hidden var {self.name!r} has no param {key!r}")


@dataclass(frozen=True)
class ComplexityTerms:
    """Scenario complexity C = n + alpha*m + beta*r + gamma*h + delta*z."""

    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0
    delta: float = 1.0
    m: int = 0
    r: int = 0
    h: int = 0
    z: int = 0


@dataclass(frozen=True)
class ScenarioSpec:
    name: str
    zones: int
    zone_adjacency: tuple[tuple[int, int], ...]
    temperature: ArProcess
    humidity: ArProcess
    air_quality: ArProcess
    energy: EnergyModel
    satisfaction: SatisfactionModel
    hidden_vars: tuple[HiddenVar, ...] = ()
    measurement_sd: tuple[tuple[str, float], ...] = ()
    extended_truth: bool = False
    extended_th: float = 0.5
    extended_haq: float = 2.0
    complexity: ComplexityTerms = field(default_factory=ComplexityTerms)
    default_seed: int = 0

    def __post_init__(self) -> None:
        if self.zones < 1:
            raise ValueError("need at least one zone")
        for a, b in self.zone_adjacency:
            if not (0 <= a < self.zones and 0 <= b < self.zones) or a == b:
                raise ValueError(f"bad zone adjacency pair ({a}, {b})")
        if self.extended_truth and self.zones != 1:
            raise ValueError("extended ground truth is defined for single-zone scenarios")

    # -- variable declarations -------------------------------------------------

    def variable_names(self) -> tuple[str, ...]:
        if self.zones == 1:
            heads = ["Temperature", "Humidity"]
        else:
            heads = [f"Temperature_{z + 1}" for z in range(self.zones)]
            heads += [f"Humidity_{z + 1}" for z in range(self.zones)]
        return tuple(heads + ["AirQuality", "EnergyConsumption", "OverallSatisfaction"])

    def variables(self) -> tuple[Variable, ...]:
        z = self.zones
        hum_kind = VarKind.MEDIATOR if self.extended_truth else VarKind.INPUT
        aq_kind = VarKind.MEDIATOR if self.extended_truth else VarKind.INPUT
        out = []
        names = self.variable_names()
        for k, name in enumerate(names):
            if k < z:
                out.append(Variable(name, VarKind.INPUT, "degC", self.temperature.bounds))
            elif k < 2 * z:
                out.append(Variable(name, hum_kind, "%RH", self.humidity.bounds))
            elif name == "AirQuality":
                out.append(Variable(name, aq_kind, "AQI", self.air_quality.bounds))
            elif name == "EnergyConsumption":
                out.append(Variable(name, VarKind.OUTPUT, "%", self.energy.bounds))
            else:
                out.append(Variable(name, VarKind.OUTPUT, "%", self.satisfaction.bounds))
        return tuple(out)

    @property
    def n_vars(self) -> int:
        return 2 * self.zones + 3

    def ground_truth(self) -> DirectedGraph:
        names = self.variable_names()
        idx = {s: k for k, s in enumerate(names)}
        e_idx = idx["EnergyConsumption"]
        s_idx = idx["OverallSatisfaction"]
        edges = set()
        for k in range(2 * self.zones + 1):  # zone drivers plus air quality
            edges.add((k, e_idx))
            edges.add((k, s_idx))
        if self.extended_truth:
            edges.add((idx["Temperature"], idx["Humidity"]))
            edges.add((idx["Humidity"], idx["AirQuality"]))
        return DirectedGraph(self.variables(), frozenset(edges))

    def constraints(self) -> StructuralConstraints:
        return StructuralConstraints(forbid_output_sources=True)

    def measurement_sd_for(self, name: str) -> float:
        base = name.split("_")[0]
        for key, sd in self.measurement_sd:
            if key == name or key == base:
                return sd
        return 0.0

    def hidden(self, kind: str) -> HiddenVar | None:
        for h in self.hidden_vars:
            if h.kind == kind:
                return h
        return None

    # -- serialization ---------------------------------------------------------

    def to_json(self) -> str:
        obj = asdict(self)
        obj["ground_truth"] = self.ground_truth().to_json_dict()
        return json.dumps(obj, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ScenarioSpec":
        obj = json.loads(text)
        obj.pop("ground_truth", None)  # derived, kept in files for reference
        return cls.from_dict(obj)

    @classmethod
    def from_dict(cls, obj: dict) -> "ScenarioSpec":
        def pairs(x):
            return tuple((str(k), float(v)) for k, v in x)

        return cls(
            name=str(obj["name"]),
            zones=int(obj["zones"]),
            zone_adjacency=tuple((int(a), int(b)) for a, b in obj["zone_adjacency"]),
            temperature=_ar_from(obj["temperature"]),
            humidity=_ar_from(obj["humidity"]),
            air_quality=_ar_from(obj["air_quality"]),
            energy=EnergyModel(**_with_bounds(obj["energy"])),
            satisfaction=SatisfactionModel(
                comfort=ComfortModel(**obj["satisfaction"]["comfort"]),
                energy_penalty=float(obj["satisfaction"]["energy_penalty"]),
                noise_sd=float(obj["satisfaction"]["noise_sd"]),
                bounds=tuple(obj["satisfaction"]["bounds"]),
            ),
            hidden_vars=tuple(
                HiddenVar(h["name"], h["kind"], pairs(h["params"]))
                for h in obj.get("hidden_vars", ())
            ),
            measurement_sd=pairs(obj.get("measurement_sd", ())),
            extended_truth=bool(obj.get("extended_truth", False)),
            extended_th=float(obj.get("extended_th", 0.5)),
            extended_haq=float(obj.get("extended_haq", 2.0)),
            complexity=ComplexityTerms(**obj.get("complexity", {})),
            default_seed=int(obj.get("default_seed", 0)),
        )


def _ar_from(obj: dict) -> ArProcess:
    return ArProcess(
        mean=float(obj["mean"]),
        sd=float(obj["sd"]),
        rho=float(obj["rho"]),
        bounds=tuple(obj["bounds"]),
        coupling=float(obj.get("coupling", 0.0)),
    )


def _with_bounds(obj: dict) -> dict:
    out = dict(obj)
    out["bounds"] = tuple(out["bounds"])
    return out


def complexity_score(spec: ScenarioSpec) -> float:
    """C = n + alpha*m + beta*r + gamma*h + delta*z (r, h, z are 0/1 flags)."""
    c = spec.complexity
    return (
        spec.n_vars
        + c.alpha * c.m
        + c.beta * c.r
        + c.gamma * c.h
        + c.delta * c.z
    )


# -- shipped scenarios ---------------------------------------------------------

_NOISE = (("Temperature", 0.2), ("Humidity", 2.0), ("AirQuality", 15.0))

_HIDDEN = (
    HiddenVar(
        "hvac_efficiency",
        "beta_efficiency",
        (("a", 8.0), ("b", 2.0), ("floor", 0.4)),
    ),
    HiddenVar(
        "occupancy",
        "markov_load",
        (("p_flip", 0.1), ("energy_load", 6.0), ("aq_load", 40.0)),
    ),
    HiddenVar(
        "outdoor_temperature",
        "sine_drift",
        (("amplitude", 0.7), ("period", 288.0)),
    ),
)


def _room_dynamics(temp_bounds=(18.0, 30.0)):
    return dict(
        temperature=ArProcess(23.5, 2.0, 0.3, temp_bounds),
        humidity=ArProcess(57.0, 6.0, 0.3, (30.0, 70.0)),
        air_quality=ArProcess(150.0, 60.0, 0.3, (0.0, 500.0)),
        energy=EnergyModel(),
        satisfaction=SatisfactionModel(),
    )


def base_scenario(extended_truth: bool = False) -> ScenarioSpec:
    return ScenarioSpec(
        name="base",
        zones=1,
        zone_adjacency=(),
        extended_truth=extended_truth,
        complexity=ComplexityTerms(),
        **_room_dynamics(),
    )


def noisy_scenario() -> ScenarioSpec:
    return ScenarioSpec(
        name="noisy",
        zones=1,
        zone_adjacency=(),
        measurement_sd=_NOISE,
        complexity=ComplexityTerms(r=1),
        **_room_dynamics(temp_bounds=(18.0, 40.0)),
    )


def hidden_scenario() -> ScenarioSpec:
    return ScenarioSpec(
        name="hidden",
        zones=1,
        zone_adjacency=(),
        hidden_vars=_HIDDEN,
        complexity=ComplexityTerms(h=1),
        **_room_dynamics(),
    )


def largesim_scenario() -> ScenarioSpec:
    dyn = _room_dynamics()
    return ScenarioSpec(
        name="largesim",
        zones=5,
        zone_adjacency=((0, 1), (1, 2), (2, 3), (3, 4)),
        temperature=replace(dyn["temperature"], coupling=0.12),
        humidity=replace(dyn["humidity"], coupling=0.08),
        air_quality=dyn["air_quality"],
        energy=replace(dyn["energy"], zone_scale=0.45),
        satisfaction=dyn["satisfaction"],
        hidden_vars=_HIDDEN,
        measurement_sd=_NOISE,
        complexity=ComplexityTerms(m=11, r=1, h=1, z=1),
    )


SCENARIOS = {
    "base": base_scenario,
    "noisy": noisy_scenario,
    "hidden": hidden_scenario,
    "largesim": largesim_scenario,
}


def load_scenario(name_or_path: str) -> ScenarioSpec:
    """Resolve a built-in scenario name or a JSON config file path."""
    if name_or_path in SCENARIOS:
        return SCENARIOS[name_or_path]()
    with open(name_or_path, "r", encoding="utf-8") as fh:
        return ScenarioSpec.from_json(fh.read())
