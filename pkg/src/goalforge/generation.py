"""Backend generation: match a service requirement against the registry or
generate a new service grounded in the stored data schemas.

The flow is match-first: an existing service that covers the requirement is
returned untouched. Only when no active service matches is a generation query
refined against the relevant schemas and handed to the generator; the result
is validated, registered, and deployed. A requirement that no schema can
support is refused rather than guessed at.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .errors import (
    GenerationParseError,
    MalformedJson,
    MockScriptMiss,
    NoSupportingSchema,
    SpecValidationError,
)
from .knowledge import DataSchema, KnowledgeStore, ParamSpec, ServiceDefinition
from .llm import CompletionRequest, LlmGateway
from .runtime import SPEC_KEYS, AGGREGATIONS, FILTER_OPS, RESULT_SHAPES, DeployedService, ServiceRuntime, ServiceSpec, validate_spec

MATCH_THRESHOLD = 0.5

STOPWORDS = {
    "a", "an", "the", "and", "or", "of", "to", "in", "on", "at", "by", "for",
    "from", "with", "near", "into", "about", "over", "under", "is", "are",
    "was", "were", "that", "this", "these", "those", "me", "my", "our", "your",
    "their", "based", "various", "it", "its",
}

_TOKEN = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> set[str]:
    return set(_TOKEN.findall(text.lower()))


def keywords(text: str) -> set[str]:
    return tokenize(text) - STOPWORDS


def jaccard(a: str, b: str) -> float:
    ta, tb = tokenize(a), tokenize(b)
    if not ta or not tb:
        return 0.0
    return len(ta & tb) / len(ta | tb)


def synthesize_name(description: str) -> str:
    """Snake_case head noun phrase of the requirement text."""
    head = re.split(r"[:.,;]", description, maxsplit=1)[0]
    words = []
    for tok in _TOKEN.findall(head.lower()):
        if tok in STOPWORDS:
            if words:
                break
            continue
        words.append(tok)
        if len(words) == 3:
            break
    name = "_".join(words) or "service"
    if not name[0].isalpha():
        name = "svc_" + name
    return name


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ServiceRequirementQuery:
    description: str
    params: tuple[tuple[str, Any], ...] = ()
    type: str = "service_req"

    def __post_init__(self):
        if not self.description:
            raise ValueError("requirement description must be non-empty")

    def binding(self) -> dict[str, Any]:
        return dict(self.params)

    @classmethod
    def make(cls, description: str, params: dict[str, Any] | None = None) -> "ServiceRequirementQuery":
        items = tuple(sorted((params or {}).items(), key=lambda kv: kv[0]))
        return cls(description=description, params=items)


@dataclass(frozen=True)
class SystemContext:
    services: tuple[ServiceDefinition, ...]
    schemas: tuple[DataSchema, ...]
    config: tuple[tuple[str, Any], ...] = ()
    offline: frozenset[str] = frozenset()
    version: int = 0

    def active_services(self) -> list[ServiceDefinition]:
        return [s for s in self.services if s.name not in self.offline]


@dataclass(frozen=True)
class RefinedGenerationQuery:
    instruction: str
    schema_excerpts: tuple[DataSchema, ...]
    endpoints: tuple[str, ...]
    target_spec: tuple[tuple[str, Any], ...]
    requirement: str = ""
    params: tuple[tuple[str, Any], ...] = ()


@dataclass(frozen=True)
class GeneratedService:
    definition: ServiceDefinition
    spec: ServiceSpec
    source_text: str


@dataclass(frozen=True)
class MatchOutcome:
    """Exactly one of `matched` / `refined` is set."""

    matched: ServiceDefinition | None = None
    refined: RefinedGenerationQuery | None = None

    def __post_init__(self):
        if (self.matched is None) == (self.refined is None):
            raise ValueError("outcome must be either a match or a refined query")


# ---------------------------------------------------------------------------
# Prompts
# ---------------------------------------------------------------------------

def build_refiner_prompt(description: str, candidates: list[ServiceDefinition]) -> CompletionRequest:
    lines = ["Select an existing service that satisfies the requirement."]
    lines.append("Known services:")
    for s in candidates:
        params = ", ".join(p.name for p in s.params)
        lines.append(f"- {s.name}: {s.description} (params: {params})")
    lines.append('Respond with JSON {"service": "<name>"} or {"service": null} if none fits.')
    return CompletionRequest(
        system_prompt="\n".join(lines),
        messages=(("user", description),),
        response_format="json",
    )


def build_generator_prompt(q_gen: RefinedGenerationQuery) -> CompletionRequest:
    lines = ["Write a service specification as a single JSON object."]
    lines.append(q_gen.instruction)
    lines.append("Source schema candidates:")
    for schema in q_gen.schema_excerpts:
        cols = ", ".join(f"{c}:{t}" for c, t in schema.columns)
        lines.append(f"- {schema.id} (source {schema.source}): {cols}")
    lines.append("Data endpoints: " + ", ".join(q_gen.endpoints))
    lines.append("Output contract: " + json.dumps(dict(q_gen.target_spec), sort_keys=True))
    lines.append("Return only the JSON object, no prose.")
    return CompletionRequest(
        system_prompt="\n".join(lines),
        messages=(("user", q_gen.requirement or q_gen.instruction),),
        response_format="json",
    )


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

def overlap_match(q: ServiceRequirementQuery, candidates: list[ServiceDefinition]) -> ServiceDefinition | None:
    """Deterministic matcher: description overlap >= threshold and the
    candidate's declared params cover the query's keys. Ties break on the
    highest overlap, then the lexicographically smallest name.
    """
    required_keys = set(q.binding())
    best: tuple[float, str] | None = None
    best_service = None
    for s in candidates:
        if not required_keys <= s.param_names():
            continue
        score = jaccard(q.description, s.description)
        if score < MATCH_THRESHOLD:
            continue
        key = (-score, s.name)
        if best is None or key < best:
            best = key
            best_service = s
    return best_service


def refine_generation_query(
    q: ServiceRequirementQuery, schemas: list[DataSchema] | tuple[DataSchema, ...]
) -> RefinedGenerationQuery:
    """Narrow the requirement to the schemas that share domain keywords with it."""
    q_keys = keywords(q.description)
    relevant = []
    for schema in schemas:
        schema_text = " ".join([schema.id, schema.source, *schema.column_names()]).replace("_", " ")
        if q_keys & keywords(schema_text):
            relevant.append(schema)
    if not relevant:
        raise NoSupportingSchema(f"no stored schema supports: {q.description!r}")
    relevant.sort(key=lambda s: s.id)
    instruction = (
        f"Requirement: {q.description}. "
        f"Parameters: {json.dumps(q.binding(), sort_keys=True)}. "
        "Produce a declarative read plan over exactly one of the schemas below."
    )
    target = (
        ("keys", sorted(SPEC_KEYS)),
        ("filter_ops", sorted(FILTER_OPS)),
        ("aggregations", sorted(AGGREGATIONS)),
        ("output_shapes", sorted(RESULT_SHAPES)),
    )
    return RefinedGenerationQuery(
        instruction=instruction,
        schema_excerpts=tuple(relevant),
        endpoints=tuple(f"store://datasets/{s.id}" for s in relevant),
        target_spec=target,
        requirement=q.description,
        params=q.params,
    )


def description_refiner(
    q: ServiceRequirementQuery,
    ctx: SystemContext,
    gateway: LlmGateway | None = None,
) -> MatchOutcome:
    """f_match: an existing active service, or a refined generation query.

    When a completion source is available the pick is LLM-assisted (a scripted
    mock may answer it); otherwise, or when the script has no entry for the
    refiner prompt, the deterministic overlap rule decides.
    """
    candidates = ctx.active_services()
    picked: ServiceDefinition | None = None
    answered = False
    if gateway is not None and candidates:
        try:
            text, _, _ = gateway.complete(build_refiner_prompt(q.description, candidates))
            answered = True
            name = json.loads(text).get("service")
            if name is not None:
                chosen = next((s for s in candidates if s.name == name), None)
                if chosen is not None and set(q.binding()) <= chosen.param_names():
                    picked = chosen
        except MockScriptMiss:
            answered = False
        except MalformedJson:
            answered = False
    if picked is None and not answered:
        picked = overlap_match(q, candidates)
    if picked is not None:
        return MatchOutcome(matched=picked)
    return MatchOutcome(refined=refine_generation_query(q, list(ctx.schemas)))


def _infer_param_type(key: str, value: Any) -> str:
    if isinstance(value, (list, tuple)):
        return "string-list"
    if key == "time":
        return "time"
    return "string"


def synthesize_definition(
    q_gen: RefinedGenerationQuery, spec: ServiceSpec, taken: dict[str, ServiceDefinition]
) -> ServiceDefinition:
    """Derive the registry entry for a generated service from θ and its spec."""
    binding = dict(q_gen.params)
    params = [
        ParamSpec(name=k, type=_infer_param_type(k, v), required=True)
        for k, v in sorted(binding.items())
    ]
    bound = {p.name for p in params}
    for param_name in sorted(spec.params_to_columns()):
        if param_name not in bound:
            params.append(ParamSpec(name=param_name, type="string", required=False))

    base = synthesize_name(q_gen.requirement or q_gen.instruction)
    name = base
    n = 1

    def body(candidate_name: str) -> ServiceDefinition:
        return ServiceDefinition(
            name=candidate_name,
            description=q_gen.requirement or q_gen.instruction,
            params=tuple(params),
            schema_refs=(spec.source_schema,),
            endpoint=f"/svc/{candidate_name}",
            origin="generated",
        )

    while name in taken and taken[name] != body(name):
        n += 1
        name = f"{base}_{n}"
    return body(name)


def generate_service(
    q_gen: RefinedGenerationQuery,
    gateway: LlmGateway,
    ctx: SystemContext,
    artifacts_dir: str | Path | None = None,
    clock=None,
) -> GeneratedService:
    """Run the generator, validate its spec, and synthesize a registry entry.

    One reprompt on invalid output, then the failure surfaces.
    """
    schema_by_id = {s.id: s for s in q_gen.schema_excerpts}
    request = build_generator_prompt(q_gen)
    last_error = ""
    raw = ""
    spec = None
    for attempt in range(2):
        try:
            raw, _, _ = gateway.complete(request)
            candidate = ServiceSpec.from_json(json.loads(raw))
            schema = schema_by_id.get(candidate.source_schema)
            if schema is None:
                raise SpecValidationError(
                    f"source_schema {candidate.source_schema!r} is not among the relevant schemas"
                )
            validate_spec(candidate, schema)
            spec = candidate
            break
        except (MalformedJson, SpecValidationError) as exc:
            last_error = str(exc)
            if isinstance(exc, MalformedJson):
                raw = exc.raw
            if attempt == 0:
                request = CompletionRequest(
                    system_prompt=request.system_prompt
                    + f"\nThe previous output was invalid ({last_error}). Return only valid JSON.",
                    messages=request.messages,
                    response_format="json",
                )
    if spec is None:
        raise GenerationParseError(f"generator output invalid after reprompt: {last_error}", raw=raw)

    taken = {s.name: s for s in ctx.services}
    definition = synthesize_definition(q_gen, spec, taken)
    generated = GeneratedService(definition=definition, spec=spec, source_text=raw)
    if artifacts_dir is not None:
        _persist_artifacts(generated, Path(artifacts_dir), clock)
    return generated


def _persist_artifacts(generated: GeneratedService, root: Path, clock) -> None:
    stamp = clock.now().strftime("%Y%m%dT%H%M%S_%f") if clock else "unstamped"
    out = root / generated.definition.name / stamp
    out.mkdir(parents=True, exist_ok=True)
    (out / "spec.json").write_text(json.dumps(generated.spec.to_json(), indent=2, sort_keys=True))
    (out / "source.txt").write_text(generated.source_text)


class BackendGenerator:
    """Coordinates matching, generation, registration and deployment."""

    def __init__(
        self,
        store: KnowledgeStore,
        runtime: ServiceRuntime,
        clock=None,
        artifacts_dir: str | Path | None = None,
    ):
        self.store = store
        self.runtime = runtime
        self.clock = clock
        self.artifacts_dir = Path(artifacts_dir) if artifacts_dir else store.data_dir / "generated"

    def system_context(self) -> SystemContext:
        return SystemContext(
            services=tuple(self.store.list_services()),
            schemas=tuple(self.store.list_schemas()),
            config=tuple(sorted(self.store.config.items())),
            offline=frozenset(self.runtime.offline_names()),
            version=self.store.registry_version,
        )

    def update_service_context(self, ctx: SystemContext, generated: GeneratedService) -> SystemContext:
        self.store.register_service(generated.definition)
        self.runtime.deploy(DeployedService(definition=generated.definition, spec=generated.spec))
        return self.system_context()

    def service_generation(
        self,
        q: ServiceRequirementQuery,
        ctx: SystemContext | None = None,
        gateway: LlmGateway | None = None,
    ) -> ServiceDefinition:
        """Algorithm: match first; otherwise refine, generate, register, deploy."""
        ctx = ctx or self.system_context()
        outcome = description_refiner(q, ctx, gateway)
        if outcome.matched is not None:
            return outcome.matched
        if gateway is None:
            raise ValueError("service generation needs a completion gateway")
        generated = generate_service(
            outcome.refined, gateway, ctx, artifacts_dir=self.artifacts_dir, clock=self.clock
        )
        self.update_service_context(ctx, generated)
        return generated.definition
