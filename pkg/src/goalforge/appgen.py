"""Turns a confirmed goal set into a hosted application: service discovery,
renderer dispatch per result shape, template composition, and URL issuance.

Apps are immutable snapshots of the data at build time; refetching a hosted
app never re-runs its services.
"""

from __future__ import annotations

import html
import json
import threading
from dataclasses import dataclass
from pathlib import Path
from importlib import resources
from typing import Any, Callable

from .clock import WallClock
from .dialogue import IdentifiedService
from .errors import GoalForgeError
from .generation import MATCH_THRESHOLD, jaccard
from .knowledge import ServiceDefinition
from .runtime import ServiceResult, ServiceRuntime


# ---------------------------------------------------------------------------
# Discovery
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MatchSet:
    """Per requested service: the registry services that satisfy it,
    best match first."""

    per_service: tuple[tuple[str, tuple[str, ...]], ...]

    def matches_for(self, name: str) -> tuple[str, ...]:
        for n, matches in self.per_service:
            if n == name:
                return matches
        return ()

    def union(self) -> set[str]:
        out: set[str] = set()
        for _, matches in self.per_service:
            out.update(matches)
        return out


def discover(
    g_user: list[IdentifiedService],
    services: tuple[ServiceDefinition, ...] | list[ServiceDefinition],
    offline: frozenset[str] | set[str] = frozenset(),
    descriptions: dict[str, str] | None = None,
    match_fn: Callable[[str, str], bool] | None = None,
) -> tuple[MatchSet, list[IdentifiedService]]:
    """Match each requested service by description similarity plus parameter
    coverage. Requests with no match come back as `unmatched` and feed
    backend generation.
    """
    descriptions = descriptions or {}
    by_name = {s.name: s for s in services}
    candidates = [s for s in services if s.name not in offline]

    def default_match(req_desc: str, svc_desc: str) -> bool:
        return jaccard(req_desc, svc_desc) >= MATCH_THRESHOLD

    match = match_fn or default_match

    per_service: list[tuple[str, tuple[str, ...]]] = []
    unmatched: list[IdentifiedService] = []
    for si in g_user:
        req_desc = descriptions.get(si.name)
        if req_desc is None:
            known = by_name.get(si.name)
            words = si.name.replace("_", " ")
            req_desc = f"{words}: {known.description}" if known else words
        req_params = set(si.params())
        scored = []
        for s in candidates:
            if not req_params <= s.param_names():
                continue
            if match(req_desc, s.description):
                scored.append((-jaccard(req_desc, s.description), s.name))
        scored.sort()
        names = tuple(name for _, name in scored)
        per_service.append((si.name, names))
        if not names:
            unmatched.append(si)
    return MatchSet(per_service=tuple(per_service)), unmatched


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

def dispatch_shape(payload: Any) -> str:
    """Total, exclusive renderer dispatch keyed on the payload's runtime type."""
    if isinstance(payload, bool):
        return "text"
    if isinstance(payload, (int, float)):
        return "metric"
    if isinstance(payload, (list, tuple)):
        return "list"
    if isinstance(payload, dict):
        return "dict"
    return "text"


def _label(service_name: str) -> str:
    return html.escape(service_name.replace("_", " "))


def _fmt(value: Any) -> str:
    if isinstance(value, float):
        return f"{value:g}"
    return html.escape(str(value))


def _item_text(item: Any) -> str:
    if isinstance(item, dict):
        return ", ".join(f"{html.escape(str(k))}: {_fmt(v)}" for k, v in item.items())
    return _fmt(item)


def render(result: ServiceResult, service_name: str = "service") -> str:
    """Render one service result into a semantic markup fragment."""
    return render_payload(result.payload, service_name)


def render_payload(payload: Any, service_name: str = "service") -> str:
    arm = dispatch_shape(payload)
    name = html.escape(service_name)
    label = _label(service_name)
    if arm == "metric":
        return (
            f'<section class="metric-card" data-service="{name}">'
            f"<h2>{label}</h2><p class=\"value\">{_fmt(payload)}</p></section>"
        )
    if arm == "list":
        items = "".join(f"<li>{_item_text(item)}</li>" for item in payload)
        return (
            f'<section class="item-list" data-service="{name}">'
            f"<h2>{label}</h2><ul>{items}</ul></section>"
        )
    if arm == "dict":
        rows = "".join(
            f"<tr><th>{html.escape(str(k))}</th><td>{_fmt(v)}</td></tr>" for k, v in payload.items()
        )
        return (
            f'<section class="kv-rows" data-service="{name}">'
            f"<h2>{label}</h2><table>{rows}</table></section>"
        )
    return (
        f'<section class="text-block" data-service="{name}">'
        f"<h2>{label}</h2><p>{html.escape(str(payload))}</p></section>"
    )


def error_fragment(service_name: str, error: Exception) -> str:
    name = html.escape(service_name)
    return (
        f'<section class="error" data-service="{name}">'
        f"<h2>{_label(service_name)}</h2><p>unavailable: {html.escape(str(error))}</p></section>"
    )


# ---------------------------------------------------------------------------
# Composition and hosting
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AppSection:
    service: str
    shape: str
    fragment: str

    def to_json(self) -> dict:
        return {"service": self.service, "shape": self.shape, "fragment": self.fragment}


@dataclass(frozen=True)
class AppDescriptor:
    app_id: str
    template_id: str
    url: str
    title: str
    sections: tuple[AppSection, ...]
    build_ms: float
    built_at: str

    def to_json(self) -> dict:
        return {
            "app_id": self.app_id,
            "template_id": self.template_id,
            "url": self.url,
            "title": self.title,
            "sections": [s.to_json() for s in self.sections],
            "build_ms": self.build_ms,
            "built_at": self.built_at,
        }

    def serialize(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)


def _load_base_template(template_dir: str | Path | None) -> str:
    if template_dir is not None:
        return (Path(template_dir) / "base.tmpl").read_text()
    return resources.files("goalforge").joinpath("templates", "base.tmpl").read_text()


class AppBuilder:
    """Invokes each identified service, renders the results, composes them
    into the base template in goal-set order, and hosts the app at a URL."""

    def __init__(
        self,
        runtime: ServiceRuntime,
        clock=None,
        id_factory: Callable[[], str] | None = None,
        template_dir: str | Path | None = None,
    ):
        self.runtime = runtime
        self.clock = clock or WallClock()
        self._next_id = id_factory or self._uuid_factory
        self.template_dir = template_dir
        self._hosted: dict[str, AppDescriptor] = {}
        self._lock = threading.Lock()

    @staticmethod
    def _uuid_factory() -> str:
        import uuid

        return uuid.uuid4().hex[:10]

    def build(
        self,
        g_user: list[IdentifiedService],
        resolved: dict[str, str] | None = None,
        title: str = "Your trip companion",
    ) -> AppDescriptor:
        """Build the app. `resolved` maps a requested service name to the
        deployed service that should answer for it (generated replacements).
        A failing service becomes an error section; the rest of the app stands.
        """
        resolved = resolved or {}
        t0 = self.clock.ticks()
        sections: list[AppSection] = []
        for si in g_user:
            target = resolved.get(si.name, si.name)
            try:
                result = self.runtime.invoke(target, si.params())
                sections.append(
                    AppSection(service=si.name, shape=result.shape, fragment=render(result, si.name))
                )
            except GoalForgeError as exc:
                sections.append(
                    AppSection(service=si.name, shape="error", fragment=error_fragment(si.name, exc))
                )
        build_seconds = self.clock.ticks() - t0
        app_id = self._next_id()
        return AppDescriptor(
            app_id=app_id,
            template_id="base",
            url=f"/app/{app_id}",
            title=title,
            sections=tuple(sections),
            build_ms=round(build_seconds * 1000.0, 4),
            built_at=self.clock.now().isoformat(),
        )

    def host(self, app: AppDescriptor) -> str:
        with self._lock:
            self._hosted[app.app_id] = app
        return app.url

    def get(self, app_id: str) -> AppDescriptor | None:
        return self._hosted.get(app_id)

    def render_document(self, app: AppDescriptor) -> str:
        base = _load_base_template(self.template_dir)
        body = "\n".join(s.fragment for s in app.sections)
        footer = f"composed {app.built_at} in {app.build_ms} ms"
        return (
            base.replace("{{title}}", html.escape(app.title))
            .replace("{{sections}}", body)
            .replace("{{footer}}", footer)
        )
