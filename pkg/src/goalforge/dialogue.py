"""Three-pass mixed-initiative dialogue: context aggregation, goal formulation
with proactive suggestions and clarifications, and proposal verification.

The session is a small state machine. The only legal order is
Pass1 -> Pass2 -> Pass3 -> Confirmed, with a rejection at Pass3 reverting to
Pass1 while the accumulated history is kept. Each pass fills a prompt template,
asks the gateway for structured JSON, and folds the answer into the session's
history and working service set.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from string import Template
from typing import Any, Callable

from .clock import WallClock
from .errors import ExtractionParseError, IllegalTransition, MalformedJson
from .knowledge import ContextSnapshot, KnowledgeStore, UserProfile
from .llm import CompletionRequest, LlmGateway
from .metrics import MetricsCollector


class DialoguePass(str, Enum):
    PASS1 = "Pass1"
    PASS2 = "Pass2"
    PASS3 = "Pass3"
    CONFIRMED = "Confirmed"
    REVERTED = "Reverted"


LEGAL_TRANSITIONS = {
    (DialoguePass.PASS1, DialoguePass.PASS2),
    (DialoguePass.PASS2, DialoguePass.PASS3),
    (DialoguePass.PASS3, DialoguePass.CONFIRMED),
    (DialoguePass.PASS3, DialoguePass.REVERTED),
    (DialoguePass.REVERTED, DialoguePass.PASS1),
}

TURN_KINDS = {"query", "proactive_suggestion", "clarification", "proposal", "confirmation", "rejection"}
SYSTEM_PASS2_KINDS = {"proactive_suggestion", "clarification"}

CONFIRM_WORDS = {"confirm", "yes", "y", "ok", "okay", "sounds good", "looks good", "go ahead"}
REJECT_WORDS = {"reject", "no", "start over", "cancel"}


@dataclass
class SessionState:
    session_id: str
    phase: DialoguePass = DialoguePass.PASS1
    turn_count: int = 0

    @property
    def context_token(self) -> str:
        return f"{self.session_id}:{self.phase.value}:{self.turn_count}"

    def digest(self) -> dict:
        return {"session_id": self.session_id, "pass": self.phase.value, "turn_count": self.turn_count}


@dataclass(frozen=True)
class DialogueTurn:
    author: str  # "user" | "system"
    text: str
    kind: str

    def __post_init__(self):
        if self.author not in ("user", "system"):
            raise ValueError(f"unknown author {self.author!r}")
        if self.kind not in TURN_KINDS:
            raise ValueError(f"unknown turn kind {self.kind!r}")

    def to_json(self) -> dict:
        return {"author": self.author, "text": self.text, "kind": self.kind}


@dataclass(frozen=True)
class GoalHypothesis:
    statement: str
    breadth: str  # "broad" | "concrete"
    candidate_services: tuple[str, ...]
    unmatched: tuple[str, ...] = ()  # candidates not present in the snapshot

    def __post_init__(self):
        if self.breadth not in ("broad", "concrete"):
            raise ValueError(f"breadth must be broad|concrete, got {self.breadth!r}")


@dataclass(frozen=True)
class IdentifiedService:
    name: str
    binding: tuple[tuple[str, Any], ...] = ()

    def params(self) -> dict[str, Any]:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.binding}

    def to_json(self) -> dict:
        return {"name": self.name, "params": self.params()}

    @classmethod
    def make(cls, name: str, params: dict[str, Any]) -> "IdentifiedService":
        items = tuple(
            (k, tuple(v) if isinstance(v, list) else v) for k, v in sorted(params.items())
        )
        return cls(name=name, binding=items)


class HistoryRecord:
    """Append-only session history: preferences, identified services and
    context digests. Views are derived from the log so serialized history
    at turn t is always a prefix of history at turn t+1.
    """

    def __init__(self):
        self.log: list[dict] = []

    def add_preference(self, key: str, value: Any) -> None:
        self.log.append({"kind": "preference", "key": key, "value": value})

    def add_identified(self, service: IdentifiedService) -> None:
        self.log.append({"kind": "identified", "service": service.to_json()})

    def add_context(self, digest: str) -> None:
        self.log.append({"kind": "context", "digest": digest})

    def preferences(self) -> dict[str, Any]:
        out: dict[str, Any] = {}
        for e in self.log:
            if e["kind"] == "preference":
                out[e["key"]] = e["value"]
        return out

    def identified(self) -> list[dict]:
        return [e["service"] for e in self.log if e["kind"] == "identified"]

    def context_digests(self) -> list[str]:
        return [e["digest"] for e in self.log if e["kind"] == "context"]

    def serialize(self) -> str:
        return json.dumps(self.log, sort_keys=True)


@dataclass
class Session:
    state: SessionState
    user: UserProfile
    gateway: LlmGateway
    history: HistoryRecord = field(default_factory=HistoryRecord)
    turns: list[DialogueTurn] = field(default_factory=list)
    pending: list[DialogueTurn] = field(default_factory=list)
    working: dict[str, dict[str, Any]] = field(default_factory=dict)  # service -> binding
    working_order: list[str] = field(default_factory=list)
    req_descriptions: dict[str, str] = field(default_factory=dict)
    queried: dict[str, set[str]] = field(default_factory=dict)
    extraction: dict = field(default_factory=dict)
    pass2_rounds: int = 0
    proposal_emitted: bool = False
    app_url: str | None = None
    transitions: list[tuple[str, str]] = field(default_factory=list)

    def transcript(self) -> list[dict]:
        return [t.to_json() for t in self.turns]

    def g_user(self) -> list[IdentifiedService]:
        return [IdentifiedService.make(n, self.working[n]) for n in self.working_order]


def normalize_value(value: Any) -> Any:
    if isinstance(value, str):
        return value.strip()
    if isinstance(value, list):
        seen: list[Any] = []
        for v in value:
            v = v.strip() if isinstance(v, str) else v
            if v not in seen:
                seen.append(v)
        return seen
    return value


def snapshot_digest(snapshot: ContextSnapshot) -> str:
    return hashlib.sha256(snapshot.serialize().encode()).hexdigest()[:16]


def snapshot_text(snapshot: ContextSnapshot) -> str:
    """Deterministic plain-text rendering of a snapshot for prompt injection."""
    user = snapshot.user
    prefs = ", ".join(f"{k}={v}" for k, v in sorted(user.preferences().items())) or "none"
    lines = [f"traveler: {user.user_id} at {user.current_location or 'unknown'}; preferences: {prefs}"]
    lines.append(f"services ({len(snapshot.services)}):")
    for s in snapshot.services:
        params = ", ".join(p.name + ("*" if p.required else "") for p in s.params)
        lines.append(f"- {s.name}: {s.description} (params: {params})")
    lines.append(f"sensors ({len(snapshot.sensor_view)}):")
    for r in snapshot.sensor_view:
        lines.append(
            f"- {r['sensor_id']} {r['kind']}={r['value']}{r['unit']} at {r['location']} ({r['timestamp']})"
        )
    return "\n".join(lines)


def _load_template(name: str, template_dir: str | Path | None) -> Template:
    if template_dir is not None:
        return Template((Path(template_dir) / name).read_text())
    return Template(resources.files("goalforge").joinpath("templates", name).read_text())


def build_pass_prompt(
    pass_name: str,
    query: str,
    snapshot: ContextSnapshot,
    history_digest: str,
    extraction: dict | None = None,
    working_set: list[dict] | None = None,
    template_dir: str | Path | None = None,
) -> CompletionRequest:
    tmpl = _load_template(f"{pass_name}.tmpl", template_dir)
    system = tmpl.safe_substitute(
        snapshot=snapshot_text(snapshot),
        history=history_digest or "none",
        extraction=json.dumps(extraction or {}, sort_keys=True),
        working_set=json.dumps(working_set or [], sort_keys=True),
    )
    return CompletionRequest(
        system_prompt=system,
        messages=(("user", query or "(no message)"),),
        response_format="json",
    )


class SessionManager:
    """Owns the dialogue sessions and drives the pass state machine."""

    def __init__(
        self,
        store: KnowledgeStore,
        clock=None,
        metrics: MetricsCollector | None = None,
        id_factory: Callable[[], str] | None = None,
        max_clarifications: int = 6,
        history_word_cap: int = 512,
        template_dir: str | Path | None = None,
        on_confirm: Callable[[Session, list[IdentifiedService]], str | None] | None = None,
    ):
        self.store = store
        self.clock = clock or WallClock()
        self.metrics = metrics
        self._next_id = id_factory or self._uuid_factory
        self.max_clarifications = max_clarifications
        self.history_word_cap = history_word_cap
        self.template_dir = template_dir
        self.on_confirm = on_confirm
        self.sessions: dict[str, Session] = {}

    @staticmethod
    def _uuid_factory() -> str:
        import uuid

        return uuid.uuid4().hex[:12]

    # -- session lifecycle -------------------------------------------------

    def begin_session(self, user: UserProfile, initial_query: str, gateway: LlmGateway) -> Session:
        session = Session(state=SessionState(session_id=self._next_id()), user=user, gateway=gateway)
        self.sessions[session.state.session_id] = session
        if initial_query.strip():
            self._record(session, DialogueTurn("user", initial_query, "query"))
        else:
            self._emit(session, DialogueTurn("system", "What would you like to do today?", "clarification"))
        return session

    def get(self, session_id: str) -> Session | None:
        return self.sessions.get(session_id)

    def snapshot(self, session: Session) -> ContextSnapshot:
        return self.store.snapshot_context(session.user, session.state.context_token)

    def transition(self, session: Session, to: DialoguePass) -> None:
        frm = session.state.phase
        if (frm, to) not in LEGAL_TRANSITIONS:
            raise IllegalTransition(f"{frm.value} -> {to.value}")
        session.transitions.append((frm.value, to.value))
        session.state.phase = to

    # -- turn plumbing ------------------------------------------------------

    def _record(self, session: Session, turn: DialogueTurn) -> None:
        if turn.kind == "proposal" and session.state.phase != DialoguePass.PASS3:
            raise IllegalTransition("proposal turns may only occur in Pass3")
        session.turns.append(turn)
        session.state.turn_count += 1

    def _emit(self, session: Session, turn: DialogueTurn) -> None:
        self._record(session, turn)
        session.pending.append(turn)

    def drain_pending(self, session: Session) -> list[DialogueTurn]:
        out = session.pending
        session.pending = []
        return out

    # -- message dispatch ---------------------------------------------------

    def handle_message(self, session: Session, text: str) -> list[DialogueTurn]:
        """Route one user message to the current pass handler and return the
        system turns produced in response."""
        phase = session.state.phase
        if phase == DialoguePass.CONFIRMED:
            raise IllegalTransition("session already confirmed")

        kind = "query"
        norm = text.strip().lower()
        if phase == DialoguePass.PASS3:
            if norm in CONFIRM_WORDS or norm.startswith("confirm"):
                kind = "confirmation"
            elif norm in REJECT_WORDS or norm.startswith("reject"):
                kind = "rejection"
        self._record(session, DialogueTurn("user", text, kind))

        if phase == DialoguePass.PASS1:
            snapshot = self.snapshot(session)
            self.run_pass1(session, snapshot)
        elif phase == DialoguePass.PASS2:
            snapshot = self.snapshot(session)
            self.run_pass2(session, snapshot)
        elif phase == DialoguePass.PASS3:
            if kind == "confirmation":
                self.confirm_proposal(session)
            elif kind == "rejection":
                self.reject_proposal(session)
            else:
                snapshot = self.snapshot(session)
                self.run_pass3(session, snapshot)
        return self.drain_pending(session)

    # -- passes -------------------------------------------------------------

    def run_pass1(self, session: Session, snapshot: ContextSnapshot) -> dict:
        if session.state.phase != DialoguePass.PASS1:
            raise IllegalTransition(f"run_pass1 in {session.state.phase.value}")
        session.history.add_context(snapshot_digest(snapshot))
        query = self._last_user_text(session)
        request = build_pass_prompt(
            "pass1", query, snapshot, self.summarize_history(session), template_dir=self.template_dir
        )
        data = self._ask_json(session, request)

        t0 = self.clock.ticks()
        location = data.get("location") or session.user.current_location or "unknown"
        time_budget = data.get("time_budget_hours")
        interests = [str(i).strip() for i in data.get("interests", []) if str(i).strip()]
        session.extraction = {
            "location": location,
            "time_budget_hours": time_budget,
            "interests": interests,
        }
        session.history.add_preference("current_location", location)
        session.history.add_preference("time_budget", time_budget if time_budget is not None else "unknown")
        if interests:
            session.history.add_preference("interests", interests)
        self._stage(session, "identification", self.clock.ticks() - t0)

        reply = str(data.get("reply") or "Noted.")
        if time_budget is None:
            self._emit(session, DialogueTurn("system", reply, "clarification"))
            self._emit(
                session,
                DialogueTurn("system", "How much time do you have for this visit?", "clarification"),
            )
        else:
            self._emit(session, DialogueTurn("system", reply, "proactive_suggestion"))
        self.transition(session, DialoguePass.PASS2)
        return session.extraction

    def run_pass2(self, session: Session, snapshot: ContextSnapshot) -> list[GoalHypothesis]:
        if session.state.phase != DialoguePass.PASS2:
            raise IllegalTransition(f"run_pass2 in {session.state.phase.value}")
        session.history.add_context(snapshot_digest(snapshot))
        request = build_pass_prompt(
            "pass2",
            self._last_user_text(session),
            snapshot,
            self.summarize_history(session),
            extraction=session.extraction,
            template_dir=self.template_dir,
        )
        data = self._ask_json(session, request)

        t0 = self.clock.ticks()
        known = snapshot.service_names()
        hypotheses: list[GoalHypothesis] = []
        for h in data.get("hypotheses", []):
            names = []
            for svc in h.get("services", []):
                name = svc.get("name", "").strip()
                if not name:
                    continue
                names.append(name)
                self._merge_binding(session, name, svc.get("params", {}), snapshot)
                if name not in known:
                    session.req_descriptions.setdefault(name, h.get("statement", name))
            hypotheses.append(
                GoalHypothesis(
                    statement=h.get("statement", ""),
                    breadth=h.get("breadth", "broad"),
                    candidate_services=tuple(names),
                    unmatched=tuple(n for n in names if n not in known),
                )
            )
        for k, v in data.get("preferences", {}).items():
            if k:
                session.history.add_preference(k, v)
        self._stage(session, "identification", self.clock.ticks() - t0)

        for turn in data.get("turns", []):
            kind = turn.get("kind", "proactive_suggestion")
            if kind not in SYSTEM_PASS2_KINDS:
                kind = "proactive_suggestion"
            self._emit(session, DialogueTurn("system", str(turn.get("text", "")), kind))
            for ask in turn.get("asks", []):
                svc, param = ask.get("service"), ask.get("param")
                if svc and param:
                    session.queried.setdefault(svc, set()).add(param)

        session.pass2_rounds += 1
        if self._ready_for_pass3(session, snapshot) or session.pass2_rounds >= self.max_clarifications:
            self.transition(session, DialoguePass.PASS3)
            self.run_pass3(session, snapshot)
        return hypotheses

    def run_pass3(self, session: Session, snapshot: ContextSnapshot) -> list[IdentifiedService]:
        if session.state.phase != DialoguePass.PASS3:
            raise IllegalTransition(f"run_pass3 in {session.state.phase.value}")
        session.history.add_context(snapshot_digest(snapshot))
        request = build_pass_prompt(
            "pass3",
            self._last_user_text(session),
            snapshot,
            self.summarize_history(session),
            working_set=[{"name": n, "params": session.working[n]} for n in session.working_order],
            template_dir=self.template_dir,
        )
        data = self._ask_json(session, request)

        t0 = self.clock.ticks()
        services = data.get("services", [])
        if services:
            session.working = {}
            session.working_order = []
            for svc in services:
                name = svc.get("name", "").strip()
                if name:
                    self._merge_binding(session, name, svc.get("params", {}), snapshot)
        for item in session.g_user():
            session.history.add_identified(item)
        missing = self._missing_required(session, snapshot)
        self._stage(session, "identification", self.clock.ticks() - t0)

        if missing:
            asks = "; ".join(f"{svc} needs {', '.join(sorted(params))}" for svc, params in missing.items())
            self._emit(session, DialogueTurn("system", f"Before I can propose this: {asks}?", "clarification"))
            for svc, params in missing.items():
                session.queried.setdefault(svc, set()).update(params)
        else:
            message = str(data.get("message") or "Here is the plan I propose.")
            plan = "; ".join(
                f"{n}({json.dumps(session.working[n], sort_keys=True)})" for n in session.working_order
            )
            self._emit(session, DialogueTurn("system", f"{message} Proposal: {plan}. Confirm?", "proposal"))
            session.proposal_emitted = True
        return session.g_user()

    # -- confirmation --------------------------------------------------------

    def confirm_proposal(self, session: Session) -> list[IdentifiedService] | None:
        """Confirm the current proposal; withheld when a required parameter is
        still unbound (a clarification is emitted instead)."""
        if session.state.phase != DialoguePass.PASS3:
            raise IllegalTransition(f"confirm in {session.state.phase.value}")
        snapshot = self.snapshot(session)
        missing = self._missing_required(session, snapshot)
        if missing or not session.working_order:
            asks = (
                "; ".join(f"{svc} needs {', '.join(sorted(p))}" for svc, p in missing.items())
                or "tell me what you would like first"
            )
            self._emit(session, DialogueTurn("system", f"Not quite ready: {asks}.", "clarification"))
            return None
        self.transition(session, DialoguePass.CONFIRMED)
        g_user = session.g_user()
        url = self.on_confirm(session, g_user) if self.on_confirm else None
        session.app_url = url
        note = f" Your application is ready at {url}" if url else ""
        self._emit(session, DialogueTurn("system", f"Confirmed.{note}", "confirmation"))
        return g_user

    def reject_proposal(self, session: Session) -> None:
        """Revert to Pass1 keeping the whole history."""
        if session.state.phase != DialoguePass.PASS3:
            raise IllegalTransition(f"reject in {session.state.phase.value}")
        self.transition(session, DialoguePass.REVERTED)
        self.transition(session, DialoguePass.PASS1)
        session.proposal_emitted = False
        self._emit(
            session,
            DialogueTurn("system", "Understood, let's rethink it. What would you like instead?", "clarification"),
        )

    # -- helpers ---------------------------------------------------------------

    def summarize_history(self, session: Session) -> str:
        """Deterministic digest of H, truncated oldest-first at the word cap."""
        items: list[str] = []
        for e in session.history.log:
            if e["kind"] == "preference":
                items.append(f"pref {e['key']}={json.dumps(e['value'], sort_keys=True)}")
            elif e["kind"] == "identified":
                items.append(f"identified {e['service']['name']}({json.dumps(e['service']['params'], sort_keys=True)})")
            else:
                items.append(f"context {e['digest']}")
        while items and sum(len(i.split()) for i in items) > self.history_word_cap:
            items.pop(0)
        return "; ".join(items)

    def _last_user_text(self, session: Session) -> str:
        for turn in reversed(session.turns):
            if turn.author == "user":
                return turn.text
        return ""

    def _merge_binding(self, session: Session, name: str, params: dict, snapshot: ContextSnapshot) -> None:
        definition = next((s for s in snapshot.services if s.name == name), None)
        binding = session.working.get(name, {})
        for k, v in params.items():
            if definition is not None and k not in definition.param_names():
                continue  # bound params stay a subset of declared params
            binding[k] = normalize_value(v)
        session.working[name] = binding
        if name not in session.working_order:
            session.working_order.append(name)

    def _missing_required(self, session: Session, snapshot: ContextSnapshot) -> dict[str, set[str]]:
        by_name = {s.name: s for s in snapshot.services}
        missing: dict[str, set[str]] = {}
        for name in session.working_order:
            definition = by_name.get(name)
            if definition is None:
                continue  # unknown service: parameters are fixed at generation time
            bound = {k for k, v in session.working[name].items() if v not in (None, "", [])}
            lacking = definition.required_params() - bound
            if lacking:
                missing[name] = lacking
        return missing

    def _ready_for_pass3(self, session: Session, snapshot: ContextSnapshot) -> bool:
        by_name = {s.name: s for s in snapshot.services}
        for name in session.working_order:
            definition = by_name.get(name)
            if definition is None:
                continue
            bound = {k for k, v in session.working[name].items() if v not in (None, "", [])}
            queried = session.queried.get(name, set())
            if definition.required_params() <= (bound | queried):
                return True
        return False

    def _ask_json(self, session: Session, request: CompletionRequest) -> dict:
        text = self._complete_logged(session, request)
        if text is None:
            retry = CompletionRequest(
                system_prompt=request.system_prompt
                + "\nYour previous output was not valid JSON. Respond with only the JSON object.",
                messages=request.messages,
                response_format="json",
            )
            text = self._complete_logged(session, retry)
            if text is None:
                raw = session.gateway.calls[-1].error or ""
                raise ExtractionParseError("pass output unparseable after one reprompt", raw=raw)
        data = json.loads(text)
        if not isinstance(data, dict):
            raise ExtractionParseError("pass output is not a JSON object", raw=text)
        return data

    def _complete_logged(self, session: Session, request: CompletionRequest) -> str | None:
        sid = session.state.session_id
        try:
            text, usage, latency = session.gateway.complete(request)
        except MalformedJson as exc:
            rec = session.gateway.calls[-1]
            if self.metrics:
                self.metrics.add_usage(sid, rec.usage)
                self.metrics.add_stage(sid, "dialogue", rec.latency)
            # Keep the raw text reachable for the caller's error path.
            session.gateway.calls[-1].error = exc.raw
            return None
        if self.metrics:
            self.metrics.add_usage(sid, usage)
            self.metrics.add_stage(sid, "dialogue", latency)
        return text

    def _stage(self, session: Session, stage: str, seconds: float) -> None:
        if self.metrics:
            self.metrics.add_stage(session.state.session_id, stage, seconds)
