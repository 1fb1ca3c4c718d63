"""Language-model hypothesis generator.

Builds a fixed prompt describing the sensed variables, queries a chat
endpoint for a candidate graph in JSON, and repairs the reply into a legal
DAG: prose around the JSON is tolerated, self-loops are dropped, cycles are
broken deterministically, and domain constraints are enforced. A rule-based
offline provider stands in for the remote service by default so every run is
reproducible without credentials.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

from .graph import (
    DirectedGraph,
    StructuralConstraints,
    Variable,
    VarKind,
    apply_constraints,
    find_cycle,
)

ENV_API_KEY = "GRID_LLM_API_KEY"
ENV_ENDPOINT = "GRID_LLM_ENDPOINT"
ENV_MODEL = "GRID_LLM_MODEL"
DEFAULT_MODEL = "gpt-3.5-turbo"


class PriorUnavailable(RuntimeError):
    """No usable graph after exhausting retries (transport or parse failure)."""


class SchemaViolation(ValueError):
    """Response names variables that do not exist in the system."""


class TransportError(RuntimeError):
    """Single request attempt failed (network, HTTP status, missing fields)."""


@dataclass(frozen=True)
class PromptSpec:
    system_message: str
    user_message: str
    model: str
    temperature: float = 1.0
    top_p: float = 0.8
    max_retries: int = 3
    base_backoff: float = 1.0

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be nonnegative")
        if not 0 < self.top_p <= 1:
            raise ValueError("top_p must lie in (0, 1]")
        if self.max_retries < 0 or self.base_backoff <= 0:
            raise ValueError("retries nonnegative, backoff positive")


def build_prompt(
    variables: Sequence[Variable],
    constraints: StructuralConstraints | None = None,
    model: str | None = None,
) -> PromptSpec:
    """Render the graph-elicitation prompt for this variable set."""
    del constraints  # the rule list is fixed; constraints are enforced on parse
    if len(variables) < 2:
        raise ValueError("need at least two variables to ask about structure")
    names = [v.name for v in variables]
    system = (
        f"You are an expert in causal discovery analyzing a smart room "
        f"environment with {len(names)} variables.\n"
        "Generate a causal DAG based on physical principles and environmental "
        "systems.\n"
        "Return your answer as a JSON object with this format exactly:\n"
        "{\"nodes\": " + json.dumps(names) + ",\n"
        " \"edges\": [[\"source\", \"target\"], ...]}"
    )
    user = (
        "Analyze this dataset with variables: " + ", ".join(names) + "\n"
        "\n"
        "Rules:\n"
        "1. Include directed edges based on likely causal mechanisms\n"
        "2. No cycles or self-loops allowed\n"
        "3. Focus on primary physical relationships"
    )
    return PromptSpec(
        system_message=system,
        user_message=user,
        model=model or os.environ.get(ENV_MODEL, DEFAULT_MODEL),
    )


def extract_json_object(text: str) -> dict:
    """First balanced, parseable JSON object in the text (prose tolerated)."""
    start = text.find("{")
    while start != -1:
        depth = 0
        in_str = False
        escaped = False
        for k in range(start, len(text)):
            ch = text[k]
            if in_str:
                if escaped:
                    escaped = False
                elif ch == "\\":
                    escaped = True
                elif ch == '"':
                    in_str = False
            elif ch == '"':
                in_str = True
            elif ch == "{":
                depth += 1
            elif ch == "}":
                depth -= 1
                if depth == 0:
                    try:
                        obj = json.loads(text[start : k + 1])
                    except json.JSONDecodeError:
                        break
                    if isinstance(obj, dict):
                        return obj
                    break
        start = text.find("{", start + 1)
    raise ValueError("no balanced JSON object found in response")


def parse_prior_response(
    text: str,
    variables: Sequence[Variable],
    constraints: StructuralConstraints | None = None,
) -> DirectedGraph:
    """Validate and repair a raw response into a constraint-respecting DAG."""
    variables = tuple(variables)
    obj = extract_json_object(text)
    if "edges" not in obj or not isinstance(obj["edges"], list):
        raise ValueError("response JSON lacks an edges list")
    index = {v.name: i for i, v in enumerate(variables)}
    for name in obj.get("nodes", []):
        if name not in index:
            raise SchemaViolation(f"unknown node {name!r} in response")

    ordered: list[tuple[int, int]] = []
    for item in obj["edges"]:
        if not (isinstance(item, (list, tuple)) and len(item) == 2):
            raise ValueError(f"malformed edge entry {item!r}")
        src, tgt = item
        if src == tgt:
            continue  # self-loops silently dropped
        if src not in index or tgt not in index:
            raise SchemaViolation(f"unknown edge endpoint in {item!r}")
        edge = (index[src], index[tgt])
        if edge not in ordered:
            ordered.append(edge)

    if constraints is not None:
        if constraints.forbid_output_sources:
            ordered = [e for e in ordered if variables[e[0]].intervenable]
        ordered = [e for e in ordered if e not in constraints.forbidden_edges]
        flipped = []
        for e in ordered:
            rev = (e[1], e[0])
            if rev in constraints.required_orientations:
                e = rev
            if e not in flipped:
                flipped.append(e)
        ordered = flipped

    # break cycles by dropping the cycle edge that arrived last in the reply
    while True:
        cycle = find_cycle(len(variables), set(ordered))
        if cycle is None:
            break
        ordered.remove(max(cycle, key=ordered.index))

    graph = DirectedGraph(variables, frozenset(ordered))
    if constraints is not None:
        graph = apply_constraints(graph, constraints)
    return graph


@dataclass
class MockProvider:
    """Deterministic offline stand-in: proposes every non-output variable as
    a driver of every output, by kind metadata rather than by name."""

    def respond(self, prompt: PromptSpec, variables: Sequence[Variable]) -> str:
        del prompt
        nodes = [v.name for v in variables]
        edges = [
            [src.name, tgt.name]
            for src in variables
            if src.kind is not VarKind.OUTPUT
            for tgt in variables
            if tgt.kind is VarKind.OUTPUT
        ]
        return json.dumps({"nodes": nodes, "edges": edges})


def _default_transport(url: str, payload: dict, headers: dict, timeout: float) -> str:
    import requests

    try:
        resp = requests.post(url, json=payload, headers=headers, timeout=timeout)
    except requests.RequestException as exc:
        raise TransportError(str(exc)) from exc
    if resp.status_code != 200:
        raise TransportError(f"HTTP {resp.status_code}: {resp.text[:200]}")
    try:
        return resp.json()["choices"][0]["message"]["content"]
    except (ValueError, KeyError, IndexError, TypeError) as exc:
        raise TransportError(f"malformed completion payload: {exc}") from exc


@dataclass
class RemoteProvider:
    """OpenAI-compatible chat-completions client; transport is injectable so
    tests never touch the network."""

    endpoint: str
    api_key: str | None = None
    timeout: float = 30.0
    transport: Callable[[str, dict, dict, float], str] = field(
        default=_default_transport
    )

    @classmethod
    def from_env(cls) -> "RemoteProvider":
        endpoint = os.environ.get(ENV_ENDPOINT)
        if not endpoint:
            raise PriorUnavailable(f"{ENV_ENDPOINT} is not set")
        return cls(endpoint=endpoint, api_key=os.environ.get(ENV_API_KEY))

    @property
    def url(self) -> str:
        base = self.endpoint.rstrip("/")
        if base.endswith("/chat/completions"):
            return base
        return base + "/v1/chat/completions"

    def respond(self, prompt: PromptSpec, variables: Sequence[Variable]) -> str:
        del variables
        payload = {
            "model": prompt.model,
            "messages": [
                {"role": "system", "content": prompt.system_message},
                {"role": "user", "content": prompt.user_message},
            ],
            "temperature": prompt.temperature,
            "top_p": prompt.top_p,
        }
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        return self.transport(self.url, payload, headers, self.timeout)


def query_prior(
    provider,
    prompt: PromptSpec,
    variables: Sequence[Variable],
    constraints: StructuralConstraints | None = None,
    sleep: Callable[[float], None] = time.sleep,
) -> DirectedGraph:
    """Ask the provider for a graph, retrying with doubling backoff on
    transport failures and unusable replies."""
    delay = prompt.base_backoff
    last_exc: Exception | None = None
    for attempt in range(prompt.max_retries + 1):
        if attempt:
            sleep(delay)
            delay *= 2.0
        try:
            text = provider.respond(prompt, variables)
            return parse_prior_response(text, variables, constraints)
        except SchemaViolation as exc:
            last_exc = exc
        except (TransportError, ValueError) as exc:
            last_exc = exc
    if isinstance(last_exc, SchemaViolation):
        raise last_exc
    raise PriorUnavailable(
        f"no usable graph after {prompt.max_retries + 1} attempts"
    ) from last_exc
