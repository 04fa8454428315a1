"""Knowledge store: service registry, data schemas, sensor data and user profiles.

Everything is persisted as newline-delimited JSON under one data directory
(`registry.jsonl`, `schemas.jsonl`, `readings.jsonl`, `users.jsonl`,
`datasets.jsonl`, `config.json`) so fixtures diff cleanly and a reopened
store is bit-identical to the one that was closed.

Mutations go through a single lock (one writer, any number of readers);
context snapshots are immutable values that can be handed to any thread.
"""

from __future__ import annotations

import json
import random
import re
import threading
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Any, Iterator

from .errors import (
    NameConflict,
    OutOfOrderTimestamp,
    OutOfRangeValue,
    SchemaUnresolved,
    UnknownKind,
)

PARAM_TYPES = {"string", "string-list", "time", "enum"}
COLUMN_TYPES = {"number", "string", "timestamp", "geo"}
SENSOR_KINDS = {"crowd_density", "air_quality", "water_quality", "weather", "noise", "traffic"}

# Validation bounds per sensor kind; out-of-range readings are rejected, not
# clamped, so a broken simulator shows up in tests instead of in the data.
KIND_BOUNDS: dict[str, tuple[float, float]] = {
    "crowd_density": (0.0, 1.0),
    "air_quality": (0.0, 500.0),
    "water_quality": (0.0, 14.0),
    "weather": (-30.0, 55.0),
    "noise": (0.0, 140.0),
    "traffic": (0.0, 1.0),
}

KIND_UNITS: dict[str, str] = {
    "crowd_density": "ratio",
    "air_quality": "AQI",
    "water_quality": "pH",
    "weather": "celsius",
    "noise": "dB",
    "traffic": "ratio",
}

# Column that carries the reading value when a sensor kind doubles as a schema.
KIND_VALUE_COLUMN: dict[str, str] = {
    "crowd_density": "density",
    "air_quality": "aqi",
    "water_quality": "ph",
    "weather": "temperature",
    "noise": "db",
    "traffic": "congestion",
}

_SNAKE = re.compile(r"^[a-z][a-z0-9_]*$")


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ParamSpec:
    name: str
    type: str = "string"
    required: bool = True

    def to_json(self) -> dict:
        return {"name": self.name, "type": self.type, "required": self.required}

    @classmethod
    def from_json(cls, d: dict) -> "ParamSpec":
        return cls(name=d["name"], type=d.get("type", "string"), required=bool(d.get("required", True)))


@dataclass(frozen=True)
class ServiceDefinition:
    name: str
    description: str
    params: tuple[ParamSpec, ...] = ()
    schema_refs: tuple[str, ...] = ()
    endpoint: str = ""
    origin: str = "builtin"

    def __post_init__(self):
        if not _SNAKE.match(self.name):
            raise ValueError(f"service name must be snake_case: {self.name!r}")
        if self.origin not in ("builtin", "generated"):
            raise ValueError(f"unknown origin: {self.origin!r}")
        names = [p.name for p in self.params]
        if len(names) != len(set(names)):
            raise ValueError(f"duplicate param names in service {self.name}")
        for p in self.params:
            if p.type not in PARAM_TYPES:
                raise ValueError(f"unknown param type {p.type!r} in service {self.name}")

    def param_names(self) -> set[str]:
        return {p.name for p in self.params}

    def required_params(self) -> set[str]:
        return {p.name for p in self.params if p.required}

    def param(self, name: str) -> ParamSpec | None:
        for p in self.params:
            if p.name == name:
                return p
        return None

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "description": self.description,
            "params": [p.to_json() for p in self.params],
            "schema_refs": list(self.schema_refs),
            "endpoint": self.endpoint,
            "origin": self.origin,
        }

    @classmethod
    def from_json(cls, d: dict) -> "ServiceDefinition":
        return cls(
            name=d["name"],
            description=d["description"],
            params=tuple(ParamSpec.from_json(p) for p in d.get("params", [])),
            schema_refs=tuple(d.get("schema_refs", [])),
            endpoint=d.get("endpoint", ""),
            origin=d.get("origin", "builtin"),
        )


@dataclass(frozen=True)
class DataSchema:
    id: str
    source: str
    columns: tuple[tuple[str, str], ...]  # (column name, value type)
    sample_row: dict | None = None

    def __post_init__(self):
        names = [c for c, _ in self.columns]
        if len(names) != len(set(names)):
            raise ValueError(f"duplicate column names in schema {self.id}")
        for _, t in self.columns:
            if t not in COLUMN_TYPES:
                raise ValueError(f"unknown column type {t!r} in schema {self.id}")
        if self.sample_row is not None:
            for col, t in self.columns:
                if col in self.sample_row and not check_column_value(self.sample_row[col], t):
                    raise ValueError(f"sample_row value for {col!r} is not a {t}")

    def column_names(self) -> list[str]:
        return [c for c, _ in self.columns]

    def column_type(self, name: str) -> str | None:
        for c, t in self.columns:
            if c == name:
                return t
        return None

    def first_column_of(self, value_type: str) -> str | None:
        for c, t in self.columns:
            if t == value_type:
                return c
        return None

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "source": self.source,
            "columns": [[c, t] for c, t in self.columns],
            "sample_row": self.sample_row,
        }

    @classmethod
    def from_json(cls, d: dict) -> "DataSchema":
        return cls(
            id=d["id"],
            source=d["source"],
            columns=tuple((c, t) for c, t in d["columns"]),
            sample_row=d.get("sample_row"),
        )


def check_column_value(value: Any, value_type: str) -> bool:
    if value_type == "number":
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if value_type == "string":
        return isinstance(value, str)
    if value_type == "timestamp":
        if not isinstance(value, str):
            return False
        try:
            datetime.fromisoformat(value.replace("Z", "+00:00"))
            return True
        except ValueError:
            return False
    if value_type == "geo":
        if not isinstance(value, str):
            return False
        parts = value.split(",")
        if len(parts) != 2:
            return False
        try:
            float(parts[0]), float(parts[1])
            return True
        except ValueError:
            return False
    return False


@dataclass(frozen=True)
class SensorReading:
    sensor_id: str
    kind: str
    value: float
    unit: str
    timestamp: datetime
    location: str

    def __post_init__(self):
        if self.kind not in SENSOR_KINDS:
            raise ValueError(f"unknown sensor kind: {self.kind!r}")

    def to_json(self) -> dict:
        return {
            "sensor_id": self.sensor_id,
            "kind": self.kind,
            "value": self.value,
            "unit": self.unit,
            "timestamp": self.timestamp.isoformat(),
            "location": self.location,
        }

    @classmethod
    def from_json(cls, d: dict) -> "SensorReading":
        return cls(
            sensor_id=d["sensor_id"],
            kind=d["kind"],
            value=d["value"],
            unit=d["unit"],
            timestamp=datetime.fromisoformat(d["timestamp"]),
            location=d["location"],
        )


@dataclass(frozen=True)
class UserProfile:
    user_id: str
    current_location: str = ""
    past_activities: tuple[str, ...] = ()
    stated_preferences: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        for k, _ in self.stated_preferences:
            if not k:
                raise ValueError("preference keys must be non-empty")

    def preferences(self) -> dict[str, str]:
        return dict(self.stated_preferences)

    def to_json(self) -> dict:
        return {
            "user_id": self.user_id,
            "current_location": self.current_location,
            "past_activities": list(self.past_activities),
            "stated_preferences": dict(self.stated_preferences),
        }

    @classmethod
    def from_json(cls, d: dict) -> "UserProfile":
        return cls(
            user_id=d["user_id"],
            current_location=d.get("current_location", ""),
            past_activities=tuple(d.get("past_activities", [])),
            stated_preferences=tuple(sorted(d.get("stated_preferences", {}).items())),
        )


@dataclass(frozen=True)
class ContextSnapshot:
    """Aggregated context handed to every dialogue pass. Immutable."""

    sensor_view: tuple[dict, ...]          # latest reading per sensor, sorted by sensor_id
    user: UserProfile
    services: tuple[ServiceDefinition, ...]  # sorted by name
    state: str                               # opaque session state token
    registry_version: int = 0

    def to_json(self) -> dict:
        return {
            "sensor_view": [dict(r) for r in self.sensor_view],
            "user": self.user.to_json(),
            "services": [s.to_json() for s in self.services],
            "state": self.state,
            "registry_version": self.registry_version,
        }

    def serialize(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)

    def service_names(self) -> set[str]:
        return {s.name for s in self.services}


# ---------------------------------------------------------------------------
# Persistent store
# ---------------------------------------------------------------------------

class KnowledgeStore:
    """Single-writer persistent store for registry, schemas, readings and rows."""

    def __init__(self, data_dir: str | Path):
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._services: dict[str, ServiceDefinition] = {}
        self._version = 0
        self._schemas: dict[str, DataSchema] = {}
        self._users: dict[str, UserProfile] = {}
        self._latest: dict[str, SensorReading] = {}
        self._reading_count = 0
        self._rows: dict[str, list[dict]] = {}
        self.config: dict[str, Any] = {}
        self._load()

    # -- persistence ------------------------------------------------------

    def _path(self, name: str) -> Path:
        return self.data_dir / name

    def _load(self) -> None:
        for line in self._read_lines("schemas.jsonl"):
            s = DataSchema.from_json(line)
            self._schemas[s.id] = s
        for line in self._read_lines("registry.jsonl"):
            d = ServiceDefinition.from_json(line["service"])
            self._services[d.name] = d
            self._version = line["version"]
        for line in self._read_lines("users.jsonl"):
            u = UserProfile.from_json(line)
            self._users[u.user_id] = u
        for line in self._read_lines("readings.jsonl"):
            r = SensorReading.from_json(line)
            self._latest[r.sensor_id] = r
            self._reading_count += 1
        for line in self._read_lines("datasets.jsonl"):
            self._rows.setdefault(line["schema_id"], []).append(line["row"])
        cfg = self._path("config.json")
        if cfg.exists():
            self.config = json.loads(cfg.read_text())

    def _read_lines(self, name: str) -> Iterator[dict]:
        p = self._path(name)
        if not p.exists():
            return
        with p.open() as f:
            for raw in f:
                raw = raw.strip()
                if raw:
                    yield json.loads(raw)

    def _append(self, name: str, record: dict) -> None:
        with self._path(name).open("a") as f:
            f.write(json.dumps(record, sort_keys=True) + "\n")

    def save_config(self) -> None:
        self._path("config.json").write_text(json.dumps(self.config, indent=2, sort_keys=True))

    def close(self) -> None:
        # All writes are flushed eagerly; close is a no-op kept for symmetry.
        pass

    # -- registry ---------------------------------------------------------

    @property
    def registry_version(self) -> int:
        return self._version

    def register_service(self, definition: ServiceDefinition) -> int:
        """Add a service. Re-registering an identical definition is a no-op."""
        with self._lock:
            for ref in definition.schema_refs:
                if ref not in self._schemas:
                    raise SchemaUnresolved(f"schema {ref!r} referenced by {definition.name} is not stored")
            existing = self._services.get(definition.name)
            if existing is not None:
                if existing == definition:
                    return self._version
                raise NameConflict(f"service {definition.name!r} already registered with a different body")
            self._version += 1
            self._services[definition.name] = definition
            self._append("registry.jsonl", {"version": self._version, "service": definition.to_json()})
            return self._version

    def lookup_service(self, name: str) -> ServiceDefinition | None:
        return self._services.get(name)

    def list_services(self) -> list[ServiceDefinition]:
        return sorted(self._services.values(), key=lambda s: s.name)

    # -- schemas ----------------------------------------------------------

    def add_schema(self, schema: DataSchema) -> None:
        with self._lock:
            if self._schemas.get(schema.id) == schema:
                return
            self._schemas[schema.id] = schema
            self._append("schemas.jsonl", schema.to_json())

    def get_schema(self, schema_id: str) -> DataSchema | None:
        return self._schemas.get(schema_id)

    def list_schemas(self) -> list[DataSchema]:
        return sorted(self._schemas.values(), key=lambda s: s.id)

    # -- users --------------------------------------------------------------

    def put_user(self, profile: UserProfile) -> None:
        with self._lock:
            self._users[profile.user_id] = profile
            self._append("users.jsonl", profile.to_json())

    def get_user(self, user_id: str) -> UserProfile | None:
        return self._users.get(user_id)

    # -- sensor data --------------------------------------------------------

    def ingest_reading(self, reading: SensorReading) -> None:
        with self._lock:
            lo, hi = KIND_BOUNDS[reading.kind]
            if not (lo <= reading.value <= hi):
                raise OutOfRangeValue(
                    f"{reading.kind} value {reading.value} outside [{lo}, {hi}]"
                )
            prev = self._latest.get(reading.sensor_id)
            if prev is not None and reading.timestamp < prev.timestamp:
                raise OutOfOrderTimestamp(
                    f"reading for {reading.sensor_id} at {reading.timestamp} "
                    f"precedes stored {prev.timestamp}"
                )
            self._latest[reading.sensor_id] = reading
            self._reading_count += 1
            self._append("readings.jsonl", reading.to_json())
            # Project into the matching dataset so service specs can query it.
            if reading.kind in self._schemas:
                row = {
                    "location": reading.location,
                    KIND_VALUE_COLUMN[reading.kind]: reading.value,
                    "timestamp": reading.timestamp.isoformat(),
                    "sensor_id": reading.sensor_id,
                }
                self._rows.setdefault(reading.kind, []).append(row)
                self._append("datasets.jsonl", {"schema_id": reading.kind, "row": row})

    def latest_readings(self) -> dict[str, SensorReading]:
        return dict(self._latest)

    @property
    def reading_count(self) -> int:
        return self._reading_count

    # -- tabular rows -------------------------------------------------------

    def append_row(self, schema_id: str, row: dict) -> None:
        with self._lock:
            if schema_id not in self._schemas:
                raise SchemaUnresolved(f"no schema {schema_id!r} for dataset row")
            self._rows.setdefault(schema_id, []).append(row)
            self._append("datasets.jsonl", {"schema_id": schema_id, "row": row})

    def rows(self, schema_id: str) -> list[dict]:
        return list(self._rows.get(schema_id, []))

    # -- snapshots ------------------------------------------------------------

    def snapshot_context(self, user: UserProfile, state_token: str) -> ContextSnapshot:
        sensor_view = tuple(
            self._latest[sid].to_json() for sid in sorted(self._latest)
        )
        return ContextSnapshot(
            sensor_view=sensor_view,
            user=user,
            services=tuple(self.list_services()),
            state=state_token,
            registry_version=self._version,
        )


# ---------------------------------------------------------------------------
# Sensor simulation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SensorSite:
    sensor_id: str
    kind: str
    location: str


@dataclass
class SimulationSpec:
    sensors: list[SensorSite]
    distributions: dict[str, dict] = field(default_factory=dict)
    interval_seconds: float = 60.0
    start: datetime = datetime(2025, 1, 1, tzinfo=timezone.utc)

    def distribution_for(self, kind: str) -> dict:
        if kind in self.distributions:
            return self.distributions[kind]
        if kind in DEFAULT_DISTRIBUTIONS:
            return DEFAULT_DISTRIBUTIONS[kind]
        raise UnknownKind(f"no distribution for sensor kind {kind!r}")


DEFAULT_DISTRIBUTIONS: dict[str, dict] = {
    "crowd_density": {"dist": "beta", "a": 2.0, "b": 5.0},
    "air_quality": {"dist": "normal", "mu": 110.0, "sigma": 45.0},
    "water_quality": {"dist": "normal", "mu": 7.2, "sigma": 0.5},
    "weather": {"dist": "normal", "mu": 29.0, "sigma": 4.0},
    "noise": {"dist": "normal", "mu": 65.0, "sigma": 8.0},
    "traffic": {"dist": "beta", "a": 2.0, "b": 2.0},
}


def _sample(rng: random.Random, kind: str, dist: dict) -> float:
    lo, hi = KIND_BOUNDS[kind]
    name = dist.get("dist", "normal")
    if name == "beta":
        return lo + (hi - lo) * rng.betavariate(dist["a"], dist["b"])
    if name == "uniform":
        return rng.uniform(max(lo, dist.get("low", lo)), min(hi, dist.get("high", hi)))
    if name == "normal":
        # Resample until in range; deterministic for a fixed seed.
        for _ in range(1000):
            v = rng.gauss(dist["mu"], dist["sigma"])
            if lo <= v <= hi:
                return v
        return min(max(dist["mu"], lo), hi)
    raise UnknownKind(f"unknown distribution {name!r} for kind {kind!r}")


def simulate_sensors(spec: SimulationSpec, horizon: int, seed: int) -> Iterator[SensorReading]:
    """Yield `horizon` readings round-robin over the fleet.

    A pure function of (spec, horizon, seed): the same arguments always
    produce the identical stream.
    """
    for site in spec.sensors:
        if site.kind not in SENSOR_KINDS:
            raise UnknownKind(f"unknown sensor kind {site.kind!r}")
        spec.distribution_for(site.kind)  # fail fast on missing distributions
    rng = random.Random(seed)
    t = spec.start
    produced = 0
    while produced < horizon:
        for site in spec.sensors:
            if produced >= horizon:
                break
            value = round(_sample(rng, site.kind, spec.distribution_for(site.kind)), 4)
            yield SensorReading(
                sensor_id=site.sensor_id,
                kind=site.kind,
                value=value,
                unit=KIND_UNITS[site.kind],
                timestamp=t,
                location=site.location,
            )
            produced += 1
        t = t + timedelta(seconds=spec.interval_seconds)
