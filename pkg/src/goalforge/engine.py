"""Wires store, gateway, dialogue, generation, runtime and builder into one
pipeline: dialogue to a confirmed goal set, discovery, generation for anything
unmatched, app build, and hosting.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Callable

from .appgen import AppBuilder, discover
from .clock import WallClock
from .dialogue import DialoguePass, IdentifiedService, Session, SessionManager
from .fixtures import install
from .generation import BackendGenerator, ServiceRequirementQuery
from .knowledge import KnowledgeStore, UserProfile
from .llm import LlmGateway, MockScript, ProviderConfig
from .metrics import MetricsCollector
from .runtime import ServiceRuntime


def _requirement_text(session: Session, name: str, registry) -> str:
    words = name.replace("_", " ")
    known = registry.lookup_service(name)
    if known is not None:
        return f"{words}: {known.description}"
    return session.req_descriptions.get(name, words)


class Engine:
    """One application instance: a knowledge store plus every runtime piece."""

    def __init__(
        self,
        data_dir: str | Path,
        provider: ProviderConfig | None = None,
        script: MockScript | None = None,
        clock=None,
        id_factory: Callable[[], str] | None = None,
        install_fixtures: bool = True,
        app_title: str = "Hyderabad companion",
    ):
        self.clock = clock or WallClock()
        self.provider = provider or ProviderConfig.from_env()
        self.script = script
        self.store = KnowledgeStore(data_dir)
        self.runtime = ServiceRuntime(self.store, clock=self.clock)
        if install_fixtures:
            install(self.store, self.runtime)
        self.metrics = MetricsCollector()
        self.generator = BackendGenerator(self.store, self.runtime, clock=self.clock)
        self.builder = AppBuilder(self.runtime, clock=self.clock, id_factory=id_factory)
        self.manager = SessionManager(
            self.store,
            clock=self.clock,
            metrics=self.metrics,
            id_factory=id_factory,
            on_confirm=self._on_confirm,
        )
        self.app_title = app_title
        self.generation_log: dict[str, list[dict]] = {}
        self.feedback_path = self.store.data_dir / "feedback.jsonl"
        self.sessions_dir = self.store.data_dir / "sessions"
        self.sessions_dir.mkdir(exist_ok=True)

    # -- sessions -----------------------------------------------------------

    def create_session(
        self,
        user: UserProfile | dict,
        initial_query: str = "",
        script: MockScript | None = None,
    ) -> tuple[Session, list]:
        if isinstance(user, dict):
            user = UserProfile.from_json(user)
        self.store.put_user(user)
        gateway = LlmGateway(self.provider, script=script or self.script, clock=self.clock)
        session = self.manager.begin_session(user, initial_query, gateway)
        turns = self.manager.drain_pending(session)
        self._persist_session(session)
        return session, turns

    def handle_message(self, session_id: str, text: str) -> tuple[Session, list]:
        session = self.manager.get(session_id)
        if session is None:
            raise KeyError(session_id)
        turns = self.manager.handle_message(session, text)
        self._persist_session(session)
        return session, turns

    def envelope(self, session: Session, turns: list | None = None) -> dict:
        confirmed = session.state.phase == DialoguePass.CONFIRMED
        env = {
            "session_id": session.state.session_id,
            "state": session.state.digest(),
            "turns": [t.to_json() for t in (turns or [])],
            "transcript": session.transcript(),
        }
        if session.state.phase == DialoguePass.PASS3 and session.proposal_emitted:
            env["proposal"] = [si.to_json() for si in session.g_user()]
        if confirmed and session.app_url:
            env["app_url"] = session.app_url
        return env

    def _persist_session(self, session: Session) -> None:
        path = self.sessions_dir / f"{session.state.session_id}.json"
        path.write_text(json.dumps(self.envelope(session), indent=2, sort_keys=True))

    # -- confirm pipeline -----------------------------------------------------

    def _on_confirm(self, session: Session, g_user: list[IdentifiedService]) -> str:
        sid = session.state.session_id
        descriptions = {
            si.name: _requirement_text(session, si.name, self.store) for si in g_user
        }
        ctx = self.generator.system_context()
        match_set, unmatched = discover(
            g_user, ctx.services, offline=ctx.offline, descriptions=descriptions
        )
        resolved: dict[str, str] = {}
        for si in g_user:
            matches = match_set.matches_for(si.name)
            if matches:
                resolved[si.name] = matches[0]

        # A requested service that is deployed but rotated offline always goes
        # through backend generation, even when an earlier replacement would
        # match at discovery; the generation component's own match branch
        # dedupes, so the registry still grows once per distinct replacement.
        unmatched_names = {si.name for si in unmatched}
        needs_generation = [
            si for si in g_user if si.name in unmatched_names or si.name in ctx.offline
        ]
        for si in needs_generation:
            resolved.pop(si.name, None)

        if needs_generation:
            t0 = self.clock.ticks()
            for si in needs_generation:
                before = self.store.registry_version
                q = ServiceRequirementQuery.make(descriptions[si.name], si.params())
                definition = self.generator.service_generation(q, gateway=session.gateway)
                resolved[si.name] = definition.name
                self.generation_log.setdefault(sid, []).append(
                    {
                        "requested": si.name,
                        "resolved": definition.name,
                        "generated": self.store.registry_version > before,
                    }
                )
            self.metrics.add_stage(sid, "generation", self.clock.ticks() - t0)

        t0 = self.clock.ticks()
        app = self.builder.build(g_user, resolved=resolved, title=self.app_title)
        self.metrics.add_stage(sid, "rendering", self.clock.ticks() - t0)
        self.metrics.add_build(sid, app.build_ms)

        t0 = self.clock.ticks()
        url = self.builder.host(app)
        apps_dir = self.store.data_dir / "apps"
        apps_dir.mkdir(exist_ok=True)
        (apps_dir / f"{app.app_id}.json").write_text(
            json.dumps(app.to_json(), indent=2, sort_keys=True)
        )
        self.metrics.add_stage(sid, "deployment", self.clock.ticks() - t0)
        return url

    # -- feedback ---------------------------------------------------------------

    def add_feedback(self, record: dict) -> None:
        for key in ("application_rating", "accuracy_rating", "relevance_rating"):
            value = record.get(key)
            if not isinstance(value, int) or not 1 <= value <= 5:
                raise ValueError(f"{key} must be an integer in [1, 5]")
        sid = record.get("session_id", "")
        if sid and any(r.get("session_id") == sid for r in self.feedback_records()):
            raise FileExistsError(f"feedback already recorded for session {sid}")
        with self.feedback_path.open("a") as f:
            f.write(json.dumps(record, sort_keys=True) + "\n")

    def feedback_records(self) -> list[dict]:
        if not self.feedback_path.exists():
            return []
        return [json.loads(line) for line in self.feedback_path.read_text().splitlines() if line]

    def feedback_aggregate(self) -> dict:
        records = self.feedback_records()
        if not records:
            return {"count": 0}
        keys = ("application_rating", "accuracy_rating", "relevance_rating")
        return {
            "count": len(records),
            **{f"{k}_mean": round(sum(r[k] for r in records) / len(records), 4) for k in keys},
        }

    # -- metrics ------------------------------------------------------------------

    def metrics_export(self) -> dict:
        return self.metrics.export()
