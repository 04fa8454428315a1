"""Exception hierarchy shared across the runtime."""

from __future__ import annotations


class GoalForgeError(Exception):
    """Base class for all errors raised by this package."""


# --- knowledge store ---

class NameConflict(GoalForgeError):
    """A service with the same name but a different body is already registered."""


class SchemaUnresolved(GoalForgeError):
    """A service references a data schema that is not in the store."""


class OutOfOrderTimestamp(GoalForgeError):
    """A sensor reading is older than the latest stored reading for that sensor."""


class OutOfRangeValue(GoalForgeError):
    """A sensor value falls outside the bounds defined for its kind."""


class UnknownKind(GoalForgeError):
    """No simulation distribution is defined for the requested sensor kind."""


# --- llm gateway ---

class GatewayTimeout(GoalForgeError):
    """The completion backend did not answer within the configured timeout."""


class BackendError(GoalForgeError):
    def __init__(self, status: int, body: str):
        self.status = status
        self.body = body
        super().__init__(f"backend returned {status}: {body[:200]}")


class MockScriptMiss(BackendError):
    """No mock script entry matched the request."""

    def __init__(self, detail: str):
        super().__init__(0, detail)


class MalformedJson(GoalForgeError):
    """A JSON-format completion did not parse."""

    def __init__(self, raw: str):
        self.raw = raw
        super().__init__(f"response is not valid JSON: {raw[:200]}")


# --- dialogue ---

class ExtractionParseError(GoalForgeError):
    """A pass produced unusable structured output even after one reprompt."""

    def __init__(self, message: str, raw: str = ""):
        self.raw = raw
        super().__init__(message)


class IllegalTransition(GoalForgeError):
    """A session state transition outside the legal pass order was attempted."""


# --- backend generation ---

class NoSupportingSchema(GoalForgeError):
    """No stored data schema is relevant to the requirement; generation refused."""


class GenerationParseError(GoalForgeError):
    """Generator output failed service-spec validation even after one reprompt."""

    def __init__(self, message: str, raw: str = ""):
        self.raw = raw
        super().__init__(message)


class SpecValidationError(GoalForgeError):
    """A declarative service spec does not type-check against its schema."""


# --- service runtime ---

class RouteConflict(GoalForgeError):
    """Two distinct services were deployed on the same endpoint route."""


class ServiceOffline(GoalForgeError):
    """The invoked service is deployed but currently offline."""


class UnknownService(GoalForgeError):
    """No deployed service with this name."""


class MissingParam(GoalForgeError):
    def __init__(self, name: str):
        self.param = name
        super().__init__(f"required parameter not bound: {name}")


class EmptyResult(GoalForgeError):
    """Filters matched no rows for a metric-shaped service."""


# --- metrics ---

class ZeroMean(GoalForgeError):
    """Coefficient of variation is undefined for zero-mean samples."""
