from __future__ import annotations

import json

import pytest

from goalforge.clock import SimulatedClock
from goalforge.errors import GenerationParseError, NameConflict, NoSupportingSchema
from goalforge.generation import (
    BackendGenerator,
    MatchOutcome,
    ServiceRequirementQuery,
    description_refiner,
    generate_service,
    jaccard,
    keywords,
    overlap_match,
    refine_generation_query,
    synthesize_name,
    tokenize,
)
from goalforge.knowledge import ServiceDefinition
from goalforge.llm import LlmGateway, MockScript, ProviderConfig

CROWD_REQUIREMENT = "crowd monitor: Tracks and reports real-time crowd density at various locations"
CROWD_SPEC = {
    "source_schema": "crowd_density",
    "filters": [],
    "aggregation": "latest",
    "output_shape": "metric",
    "param_map": {"location": "location"},
}


def crowd_query():
    return ServiceRequirementQuery.make(CROWD_REQUIREMENT, {"location": "hist_site", "time": "now"})


def mk_gateway(entries):
    return LlmGateway(ProviderConfig(mode="mock"), script=MockScript.from_json(entries), clock=SimulatedClock())


def generator_for(seeded):
    store, rt, clock = seeded
    return BackendGenerator(store, rt, clock=clock, artifacts_dir=store.data_dir / "generated")


# -- text utilities ---------------------------------------------------------------


def test_tokenize_and_keywords():
    assert tokenize("Real-time Crowd density!") == {"real", "time", "crowd", "density"}
    assert "the" not in keywords("the crowd at the gate")


def test_jaccard_edges():
    assert jaccard("", "anything") == 0.0
    assert jaccard("crowd density", "crowd density") == 1.0
    assert 0 < jaccard("crowd density now", "crowd density later") < 1


def test_synthesize_name():
    assert synthesize_name(CROWD_REQUIREMENT) == "crowd_monitor"
    assert synthesize_name("crowd monitoring at historical sites") == "crowd_monitoring"
    assert synthesize_name("find restaurants by cuisine near me") == "find_restaurants"
    assert synthesize_name("") == "service"


# -- description refiner -------------------------------------------------------------


def test_refiner_llm_assisted_match(seeded):
    gen = generator_for(seeded)
    q = ServiceRequirementQuery.make(
        "find restaurants by cuisine near me", {"location": "Charminar", "cuisine": "Any"}
    )
    gateway = mk_gateway(
        [{"match": "Select an existing service", "response": json.dumps({"service": "restaurant_finder"})}]
    )
    outcome = description_refiner(q, gen.system_context(), gateway)
    assert outcome.matched is not None
    assert outcome.matched.name == "restaurant_finder"


def test_refiner_param_coverage_gates_match(seeded):
    gen = generator_for(seeded)
    # historical_info only declares site_name: coverage of {location, time} fails
    q = ServiceRequirementQuery.make(
        "historical info: Provides historical and cultural information about monuments and sites",
        {"location": "Charminar", "time": "now"},
    )
    outcome = description_refiner(q, gen.system_context())
    assert outcome.refined is not None


def test_refiner_empty_registry_needs_generation(seeded):
    store, rt, clock = seeded
    ctx = BackendGenerator(store, rt, clock=clock).system_context()
    empty_ctx = type(ctx)(services=(), schemas=ctx.schemas, config=ctx.config, offline=frozenset(), version=0)
    outcome = description_refiner(crowd_query(), empty_ctx)
    assert outcome.refined is not None


def test_refiner_deterministic_rule_matches_identical_description(seeded):
    gen = generator_for(seeded)
    q = crowd_query()
    # exact description reuse: overlap 0.909, param coverage holds
    outcome = description_refiner(q, gen.system_context())
    assert outcome.matched is not None and outcome.matched.name == "crowd_monitor"


def test_refiner_skips_offline_candidates(seeded):
    store, rt, clock = seeded
    rt.set_status("crowd_monitor", "offline")
    gen = BackendGenerator(store, rt, clock=clock)
    outcome = description_refiner(crowd_query(), gen.system_context())
    assert outcome.refined is not None


def test_overlap_tie_break_smallest_name():
    a = ServiceDefinition(name="svc_b", description="alpha beta gamma", endpoint="/svc/svc_b")
    b = ServiceDefinition(name="svc_a", description="alpha beta gamma", endpoint="/svc/svc_a")
    q = ServiceRequirementQuery.make("alpha beta gamma")
    assert overlap_match(q, [a, b]).name == "svc_a"


def test_match_outcome_exactly_one_variant():
    with pytest.raises(ValueError):
        MatchOutcome()


# -- query refinement -------------------------------------------------------------------


def test_refine_embeds_relevant_crowd_schema(seeded):
    store, _, _ = seeded
    refined = refine_generation_query(crowd_query(), store.list_schemas())
    ids = [s.id for s in refined.schema_excerpts]
    assert "crowd_density" in ids
    assert dict(refined.target_spec)["output_shapes"] == ["dict", "list", "metric", "text"]
    assert refined.requirement == CROWD_REQUIREMENT


def test_refine_relevance_matches_keyword_oracle(seeded):
    store, _, _ = seeded
    schemas = store.list_schemas()
    q = ServiceRequirementQuery.make("water quality and air quality checks for the lake")
    refined = refine_generation_query(q, schemas)
    picked = {s.id for s in refined.schema_excerpts}
    # independent keyword-overlap oracle
    q_keys = keywords(q.description)
    expected = set()
    for schema in schemas:
        text = " ".join([schema.id, schema.source, *schema.column_names()]).replace("_", " ")
        if q_keys & keywords(text):
            expected.add(schema.id)
    assert picked == expected
    assert {"water_quality", "air_quality"} <= picked


def test_refine_no_supporting_schema(seeded):
    store, _, _ = seeded
    q = ServiceRequirementQuery.make("teleportation scheduling for interstellar commuters")
    with pytest.raises(NoSupportingSchema):
        refine_generation_query(q, store.list_schemas())


# -- service generation ---------------------------------------------------------------------


def test_generate_service_from_canned_spec(seeded):
    store, rt, clock = seeded
    gen = generator_for(seeded)
    rt.set_status("crowd_monitor", "offline")
    refined = refine_generation_query(crowd_query(), store.list_schemas())
    gateway = mk_gateway(
        [{"match": "Source schema candidates", "response": json.dumps(CROWD_SPEC)}]
    )
    generated = generate_service(refined, gateway, gen.system_context(), clock=clock)
    assert generated.definition.origin == "generated"
    assert generated.definition.param_names() == {"location", "time"}
    assert generated.spec.output_shape == "metric"
    assert generated.definition.name == "crowd_monitor_2"  # original name taken


def test_generate_service_invalid_column_named_in_error(seeded):
    store, rt, clock = seeded
    gen = generator_for(seeded)
    bad = dict(CROWD_SPEC, param_map={"location": "no_such_column"})
    refined = refine_generation_query(crowd_query(), store.list_schemas())
    gateway = mk_gateway([{"match": "Source schema candidates", "response": json.dumps(bad)}])
    with pytest.raises(GenerationParseError) as err:
        generate_service(refined, gateway, gen.system_context(), clock=clock)
    assert "no_such_column" in str(err.value)


def test_generate_service_reprompts_once_then_succeeds(seeded):
    store, rt, clock = seeded
    gen = generator_for(seeded)
    refined = refine_generation_query(crowd_query(), store.list_schemas())
    gateway = mk_gateway(
        [
            {"seq": 0, "response": "not json"},
            {"match": "Source schema candidates", "response": json.dumps(CROWD_SPEC)},
        ]
    )
    generated = generate_service(refined, gateway, gen.system_context(), clock=clock)
    assert generated.spec.source_schema == "crowd_density"
    assert len(gateway.calls) == 2


def test_ten_generations_identical(seeded):
    store, rt, clock = seeded
    gen = generator_for(seeded)
    refined = refine_generation_query(crowd_query(), store.list_schemas())
    specs = []
    for _ in range(10):
        gateway = mk_gateway(
            [{"match": "Source schema candidates", "response": json.dumps(CROWD_SPEC)}]
        )
        generated = generate_service(refined, gateway, gen.system_context(), clock=clock)
        specs.append(generated.spec.to_json())
    assert all(s == specs[0] for s in specs)


def test_artifacts_persisted_with_validated_spec(seeded):
    store, rt, clock = seeded
    gen = generator_for(seeded)
    refined = refine_generation_query(crowd_query(), store.list_schemas())
    gateway = mk_gateway(
        [{"match": "Source schema candidates", "response": json.dumps(CROWD_SPEC)}]
    )
    generated = generate_service(
        refined, gateway, gen.system_context(), artifacts_dir=gen.artifacts_dir, clock=clock
    )
    dirs = list((gen.artifacts_dir / generated.definition.name).iterdir())
    assert len(dirs) == 1
    assert json.loads((dirs[0] / "spec.json").read_text()) == generated.spec.to_json()
    assert (dirs[0] / "source.txt").read_text() == generated.source_text


# -- the full algorithm ------------------------------------------------------------------------


def test_service_generation_matched_query_no_mutation(seeded):
    gen = generator_for(seeded)
    q = ServiceRequirementQuery.make(
        "historical info: Provides historical and cultural information about monuments and sites",
        {"site_name": ["Charminar"]},
    )
    before = gen.store.registry_version
    result = gen.service_generation(q)
    assert result.name == "historical_info"
    assert gen.store.registry_version == before


def test_service_generation_generates_registers_and_deploys(seeded):
    store, rt, _ = seeded
    gen = generator_for(seeded)
    rt.set_status("crowd_monitor", "offline")
    gateway = mk_gateway(
        [{"match": "Source schema candidates", "response": json.dumps(CROWD_SPEC)}]
    )
    before = store.registry_version
    q = crowd_query()
    result = gen.service_generation(q, gateway=gateway)
    assert result.origin == "generated"
    assert store.registry_version == before + 1
    assert rt.invoke(result.name, {"location": "Charminar", "time": "now"}).shape == "metric"

    # idempotence: the same query now matches, no second registration
    again = gen.service_generation(q, gateway=gateway)
    assert again.name == result.name
    assert store.registry_version == before + 1


def test_service_generation_without_schema_refused(seeded):
    gen = generator_for(seeded)
    q = ServiceRequirementQuery.make("starship docking permits", {"berth": "A1"})
    before = gen.store.registry_version
    with pytest.raises(NoSupportingSchema):
        gen.service_generation(q, gateway=mk_gateway([{"match": "x", "response": "{}"}]))
    assert gen.store.registry_version == before


def test_update_service_context_nine_to_ten(seeded):
    store, rt, clock = seeded
    gen = generator_for(seeded)
    ctx = gen.system_context()
    assert len(ctx.services) == 9
    refined = refine_generation_query(crowd_query(), store.list_schemas())
    gateway = mk_gateway(
        [{"match": "Source schema candidates", "response": json.dumps(CROWD_SPEC)}]
    )
    generated = generate_service(refined, gateway, ctx, clock=clock)
    new_ctx = gen.update_service_context(ctx, generated)
    assert len(new_ctx.services) == 10
    assert new_ctx.version == ctx.version + 1


def test_update_service_context_name_conflict_propagates(seeded):
    store, rt, clock = seeded
    gen = generator_for(seeded)
    from goalforge.generation import GeneratedService
    from goalforge.runtime import ServiceSpec

    clash = GeneratedService(
        definition=ServiceDefinition(
            name="crowd_monitor", description="different body", endpoint="/svc/clash", origin="generated",
            schema_refs=("crowd_density",),
        ),
        spec=ServiceSpec.from_json(CROWD_SPEC),
        source_text="{}",
    )
    ctx = gen.system_context()
    with pytest.raises(NameConflict):
        gen.update_service_context(ctx, clash)
    assert gen.system_context().version == ctx.version


def test_two_sequential_updates_bump_versions(seeded):
    store, rt, clock = seeded
    gen = generator_for(seeded)
    v0 = store.registry_version
    for i, (name, desc_kw) in enumerate([("noise_watch", "noise db levels"), ("traffic_watch", "traffic congestion levels")]):
        q = ServiceRequirementQuery.make(f"{name.replace('_', ' ')}: {desc_kw}", {"location": "Charminar"})
        schema_id = "noise" if i == 0 else "traffic"
        spec = {
            "source_schema": schema_id, "filters": [], "aggregation": "latest",
            "output_shape": "metric", "param_map": {"location": "location"},
        }
        gateway = mk_gateway([{"match": "Source schema candidates", "response": json.dumps(spec)}])
        gen.service_generation(q, gateway=gateway)
    assert store.registry_version == v0 + 2
