"""Smart-city fixture world: 12 schemas, 9 builtin services with hand-written
specs, static datasets, and a 12-sensor fleet.
"""

from __future__ import annotations

import json
from importlib import resources

from .knowledge import (
    DataSchema,
    KnowledgeStore,
    SensorSite,
    ServiceDefinition,
    SimulationSpec,
    simulate_sensors,
)
from .runtime import DeployedService, ServiceRuntime, ServiceSpec


def _data(name: str):
    return json.loads(resources.files("goalforge").joinpath("data", name).read_text())


def load_schemas() -> list[DataSchema]:
    return [DataSchema.from_json(d) for d in _data("schemas.json")]


def load_builtin_services() -> list[tuple[ServiceDefinition, ServiceSpec]]:
    out = []
    for entry in _data("services.json"):
        out.append(
            (ServiceDefinition.from_json(entry["definition"]), ServiceSpec.from_json(entry["spec"]))
        )
    return out


def load_datasets() -> dict[str, list[dict]]:
    return _data("datasets.json")


def sensor_fleet() -> list[SensorSite]:
    return [SensorSite(**d) for d in _data("sensors.json")]


def install(
    store: KnowledgeStore,
    runtime: ServiceRuntime | None = None,
    sensor_readings: int = 120,
    seed: int = 7,
) -> None:
    """Populate a store (and optionally deploy the builtins) with the fixture
    world. Idempotent for a store that was already seeded with the same data.
    """
    for schema in load_schemas():
        store.add_schema(schema)
    for schema_id, rows in load_datasets().items():
        if not store.rows(schema_id):
            for row in rows:
                store.append_row(schema_id, row)
    services = load_builtin_services()
    for definition, _ in services:
        if store.lookup_service(definition.name) is None:
            store.register_service(definition)
    if sensor_readings and store.reading_count == 0:
        spec = SimulationSpec(sensors=sensor_fleet())
        for reading in simulate_sensors(spec, horizon=sensor_readings, seed=seed):
            store.ingest_reading(reading)
    if runtime is not None:
        deploy_builtins(runtime, store)


def deploy_builtins(runtime: ServiceRuntime, store: KnowledgeStore) -> None:
    for definition, spec in load_builtin_services():
        if runtime.get(definition.name) is None:
            runtime.deploy(DeployedService(definition=definition, spec=spec))
