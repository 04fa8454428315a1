"""Service runtime: hosts active services and executes their declarative specs.

A service spec is a small validated execution plan (source schema, filters,
aggregation, output shape, parameter-to-column map). Builtin services carry
hand-written specs so builtin and generated services share one execution path.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from datetime import datetime
from statistics import fmean
from typing import Any

from .clock import WallClock
from .errors import (
    EmptyResult,
    MissingParam,
    RouteConflict,
    ServiceOffline,
    SpecValidationError,
    UnknownService,
)
from .knowledge import DataSchema, KnowledgeStore, ServiceDefinition

FILTER_OPS = {"eq", "lt", "gt", "contains"}
AGGREGATIONS = {"latest", "mean", "count", "list", "lookup"}
RESULT_SHAPES = {"metric", "list", "dict", "text"}

# Which output shapes each aggregation may produce.
_SHAPE_FOR = {
    "latest": {"metric", "dict"},
    "mean": {"metric"},
    "count": {"metric"},
    "list": {"list"},
    "lookup": {"dict", "text"},
}

SPEC_KEYS = {"source_schema", "filters", "aggregation", "output_shape", "param_map"}

WILDCARD = "any"  # binding value that matches every row, compared case-insensitively


@dataclass(frozen=True)
class FilterClause:
    column: str
    op: str
    value: Any

    def to_json(self) -> dict:
        return {"column": self.column, "op": self.op, "value": self.value}


@dataclass(frozen=True)
class ServiceSpec:
    source_schema: str
    filters: tuple[FilterClause, ...] = ()
    aggregation: str = "list"
    output_shape: str = "list"
    param_map: tuple[tuple[str, str], ...] = ()  # param name -> column name

    def params_to_columns(self) -> dict[str, str]:
        return dict(self.param_map)

    def to_json(self) -> dict:
        return {
            "source_schema": self.source_schema,
            "filters": [f.to_json() for f in self.filters],
            "aggregation": self.aggregation,
            "output_shape": self.output_shape,
            "param_map": dict(self.param_map),
        }

    @classmethod
    def from_json(cls, d: dict) -> "ServiceSpec":
        unknown = set(d) - SPEC_KEYS
        if unknown:
            raise SpecValidationError(f"unknown spec keys: {sorted(unknown)}")
        missing = SPEC_KEYS - set(d)
        if missing:
            raise SpecValidationError(f"missing spec keys: {sorted(missing)}")
        filters = tuple(
            FilterClause(column=f["column"], op=f["op"], value=f["value"]) for f in d["filters"]
        )
        return cls(
            source_schema=d["source_schema"],
            filters=filters,
            aggregation=d["aggregation"],
            output_shape=d["output_shape"],
            param_map=tuple(sorted(d["param_map"].items())),
        )


def validate_spec(spec: ServiceSpec, schema: DataSchema) -> None:
    """Type-check a spec against its schema. Raises SpecValidationError."""
    if spec.source_schema != schema.id:
        raise SpecValidationError(f"spec schema {spec.source_schema!r} != {schema.id!r}")
    if spec.aggregation not in AGGREGATIONS:
        raise SpecValidationError(f"unknown aggregation {spec.aggregation!r}")
    if spec.output_shape not in RESULT_SHAPES:
        raise SpecValidationError(f"unknown output shape {spec.output_shape!r}")
    if spec.output_shape not in _SHAPE_FOR[spec.aggregation]:
        raise SpecValidationError(
            f"aggregation {spec.aggregation!r} cannot produce shape {spec.output_shape!r}"
        )
    for clause in spec.filters:
        ctype = schema.column_type(clause.column)
        if ctype is None:
            raise SpecValidationError(
                f"filter column {clause.column!r} does not exist in schema {schema.id}"
            )
        if clause.op not in FILTER_OPS:
            raise SpecValidationError(f"unknown filter op {clause.op!r}")
        if clause.op in ("lt", "gt") and ctype != "number":
            raise SpecValidationError(f"op {clause.op!r} needs a number column, got {ctype}")
        if clause.op == "contains" and ctype != "string":
            raise SpecValidationError(f"op 'contains' needs a string column, got {ctype}")
    for param, column in spec.param_map:
        if schema.column_type(column) is None:
            raise SpecValidationError(
                f"param_map column {column!r} (for param {param!r}) does not exist in schema {schema.id}"
            )
    if spec.aggregation in ("latest",) and schema.first_column_of("timestamp") is None:
        raise SpecValidationError(f"aggregation 'latest' needs a timestamp column in {schema.id}")
    if spec.aggregation == "mean" and schema.first_column_of("number") is None:
        raise SpecValidationError(f"aggregation 'mean' needs a number column in {schema.id}")
    if spec.output_shape == "metric" and spec.aggregation != "count":
        if schema.first_column_of("number") is None:
            raise SpecValidationError(f"metric shape needs a number column in {schema.id}")
    if spec.aggregation == "lookup" and spec.output_shape == "text":
        if schema.first_column_of("string") is None:
            raise SpecValidationError(f"text lookup needs a string column in {schema.id}")


@dataclass(frozen=True)
class ServiceResult:
    shape: str
    payload: Any
    produced_at: datetime

    def __post_init__(self):
        ok = {
            "metric": lambda p: isinstance(p, (int, float)) and not isinstance(p, bool),
            "list": lambda p: isinstance(p, list),
            "dict": lambda p: isinstance(p, dict),
            "text": lambda p: isinstance(p, str),
        }[self.shape]
        if not ok(self.payload):
            raise ValueError(f"payload does not match shape {self.shape!r}")

    def to_json(self) -> dict:
        return {"shape": self.shape, "payload": self.payload, "produced_at": self.produced_at.isoformat()}


@dataclass
class DeployedService:
    definition: ServiceDefinition
    spec: ServiceSpec
    status: str = "active"  # "active" | "offline"


# ---------------------------------------------------------------------------
# Spec execution
# ---------------------------------------------------------------------------

def _loose_eq(row_value: Any, bound: Any) -> bool:
    if row_value == bound:
        return True
    return str(row_value) == str(bound)


def _binding_matches(row_value: Any, bound: Any) -> bool:
    if isinstance(bound, (list, tuple)):
        return any(_loose_eq(row_value, v) for v in bound)
    if isinstance(bound, str) and bound.strip().lower() == WILDCARD:
        return True
    return _loose_eq(row_value, bound)


def _clause_matches(row: dict, clause: FilterClause) -> bool:
    value = row.get(clause.column)
    if clause.op == "eq":
        return _loose_eq(value, clause.value)
    if clause.op == "lt":
        try:
            return float(value) < float(clause.value)
        except (TypeError, ValueError):
            return False
    if clause.op == "gt":
        try:
            return float(value) > float(clause.value)
        except (TypeError, ValueError):
            return False
    if clause.op == "contains":
        return isinstance(value, str) and str(clause.value) in value
    return False


def execute_spec(
    spec: ServiceSpec,
    schema: DataSchema,
    rows: list[dict],
    binding: dict[str, Any],
    produced_at: datetime,
) -> ServiceResult:
    """Run filters + aggregation over the rows. Pure: never touches the store."""
    surviving = [r for r in rows if all(_clause_matches(r, c) for c in spec.filters)]
    for param, column in spec.param_map:
        if param in binding:
            bound = binding[param]
            surviving = [r for r in surviving if _binding_matches(r.get(column), bound)]

    shape = spec.output_shape
    if not surviving:
        if shape == "metric":
            raise EmptyResult(f"no rows matched for metric service over {schema.id}")
        empty = {"list": [], "dict": {}, "text": ""}[shape]
        return ServiceResult(shape=shape, payload=empty, produced_at=produced_at)

    agg = spec.aggregation
    if agg == "count":
        return ServiceResult(shape="metric", payload=len(surviving), produced_at=produced_at)
    if agg == "mean":
        col = schema.first_column_of("number")
        return ServiceResult(
            shape="metric",
            payload=fmean(float(r[col]) for r in surviving),
            produced_at=produced_at,
        )
    if agg == "latest":
        ts_col = schema.first_column_of("timestamp")
        last = max(surviving, key=lambda r: str(r.get(ts_col, "")))
        if shape == "dict":
            return ServiceResult(shape="dict", payload=dict(last), produced_at=produced_at)
        num_col = schema.first_column_of("number")
        return ServiceResult(shape="metric", payload=float(last[num_col]), produced_at=produced_at)
    if agg == "list":
        return ServiceResult(shape="list", payload=[dict(r) for r in surviving], produced_at=produced_at)
    if agg == "lookup":
        first = surviving[0]
        if shape == "text":
            col = schema.first_column_of("string")
            return ServiceResult(shape="text", payload=str(first.get(col, "")), produced_at=produced_at)
        return ServiceResult(shape="dict", payload=dict(first), produced_at=produced_at)
    raise SpecValidationError(f"unknown aggregation {agg!r}")


# ---------------------------------------------------------------------------
# Runtime
# ---------------------------------------------------------------------------

class ServiceRuntime:
    """In-process service host. Invocations are read-only and freely
    concurrent; deploy/set_status serialize through one lock.
    """

    def __init__(self, store: KnowledgeStore, clock=None):
        self.store = store
        self.clock = clock or WallClock()
        self._services: dict[str, DeployedService] = {}
        self._routes: dict[str, str] = {}  # endpoint -> service name
        self._lock = threading.Lock()

    def deploy(self, service: DeployedService) -> None:
        schema = self.store.get_schema(service.spec.source_schema)
        if schema is None:
            raise SpecValidationError(f"schema {service.spec.source_schema!r} not in store")
        validate_spec(service.spec, schema)
        with self._lock:
            name = service.definition.name
            route = service.definition.endpoint
            owner = self._routes.get(route)
            if owner is not None and owner != name:
                raise RouteConflict(f"route {route!r} already owned by {owner!r}")
            self._services[name] = service
            self._routes[route] = name

    def get(self, name: str) -> DeployedService | None:
        return self._services.get(name)

    def deployed_names(self) -> list[str]:
        return sorted(self._services)

    def offline_names(self) -> set[str]:
        return {n for n, s in self._services.items() if s.status == "offline"}

    def set_status(self, name: str, status: str) -> None:
        if status not in ("active", "offline"):
            raise ValueError(f"unknown status {status!r}")
        with self._lock:
            svc = self._services.get(name)
            if svc is None:
                raise UnknownService(name)
            svc.status = status

    def invoke(self, name: str, binding: dict[str, Any]) -> ServiceResult:
        svc = self._services.get(name)
        if svc is None:
            raise UnknownService(name)
        if svc.status != "active":
            raise ServiceOffline(name)
        for p in svc.definition.params:
            if p.required and p.name not in binding:
                raise MissingParam(p.name)
        schema = self.store.get_schema(svc.spec.source_schema)
        rows = self.store.rows(svc.spec.source_schema)
        return execute_spec(svc.spec, schema, rows, binding, self.clock.now())
