"""Tourist-Guide evaluation bench: goal corpus, scripted agents, batch
orchestration, identification scoring (precision/recall/F1/parameter
accuracy), token and latency aggregation, and service-rotation fault
injection.

Scoring is macro-averaged: every run is scored on its own and the report
averages per-run values, so the reported F1 is the mean of per-run F1s and
not the harmonic mean of the averaged precision and recall.
"""

from __future__ import annotations

import itertools
import json
import random
import statistics
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

from .clock import SimulatedClock
from .dialogue import DialoguePass, build_pass_prompt
from .engine import Engine
from .errors import ZeroMean
from .fixtures import load_builtin_services
from .generation import build_refiner_prompt
from .knowledge import ContextSnapshot, UserProfile
from .llm import MockScript, ProviderConfig, TokenUsage, classify_tokens
from .metrics import STAGES


# ---------------------------------------------------------------------------
# Corpus
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TouristGoal:
    id: str
    utterance: str
    category: str  # "concrete" | "ambiguous"
    truth_services: frozenset[str]
    truth_params: tuple[tuple[str, tuple[tuple[str, Any], ...]], ...]
    time_budget_hours: float

    def __post_init__(self):
        if self.category not in ("concrete", "ambiguous"):
            raise ValueError(f"unknown category {self.category!r}")
        if not self.truth_services:
            raise ValueError(f"goal {self.id} has no ground-truth services")
        if not 1.0 <= self.time_budget_hours <= 5.0:
            raise ValueError(f"goal {self.id} time budget outside [1, 5] hours")

    def params_for(self, service: str) -> dict[str, Any]:
        for name, items in self.truth_params:
            if name == service:
                return {k: (list(v) if isinstance(v, tuple) else v) for k, v in items}
        return {}

    @classmethod
    def from_json(cls, d: dict) -> "TouristGoal":
        params = tuple(
            (
                svc,
                tuple(
                    (k, tuple(v) if isinstance(v, list) else v)
                    for k, v in sorted(binding.items())
                ),
            )
            for svc, binding in sorted(d.get("truth_params", {}).items())
        )
        return cls(
            id=d["id"],
            utterance=d["utterance"],
            category=d["category"],
            truth_services=frozenset(d["truth_services"]),
            truth_params=params,
            time_budget_hours=float(d["time_budget_hours"]),
        )


def load_corpus(path: str | Path) -> list[TouristGoal]:
    return [TouristGoal.from_json(d) for d in json.loads(Path(path).read_text())]


# ---------------------------------------------------------------------------
# Mock script synthesis: one scripted Tourist/Guide transcript per goal
# ---------------------------------------------------------------------------

# Deterministic imperfections so identification metrics are not trivially 1.0:
# two goals over-identify one extra service, one goal binds a wrong value.
NOISE_EXTRA = {
    "a03": ("air_quality", {"location": "Charminar"}),
    "c07": ("travel_options", {"destination": "Charminar"}),
}
NOISE_PARAM = {"c13": ("crowd_monitor", "time", "now")}

TOURIST_ACK = "That sounds good, please include everything relevant."


def scripted_identified(goal: TouristGoal, noise: bool = True) -> list[dict]:
    services = [{"name": s, "params": goal.params_for(s)} for s in sorted(goal.truth_services)]
    if not noise:
        return services
    extra = NOISE_EXTRA.get(goal.id)
    if extra and extra[0] not in goal.truth_services:
        services.append({"name": extra[0], "params": dict(extra[1])})
    wrong = NOISE_PARAM.get(goal.id)
    if wrong:
        for svc in services:
            if svc["name"] == wrong[0]:
                svc["params"] = {**svc["params"], wrong[1]: wrong[2]}
    return services


def synthesize_goal_script(
    goal: TouristGoal, rotation: Iterable[str] = (), noise: bool = True
) -> MockScript:
    """Build the canned Guide-side responses for one goal's session."""
    identified = scripted_identified(goal, noise=noise)
    location = "Charminar"
    for svc in identified:
        for key in ("location", "destination"):
            if key in svc["params"] and isinstance(svc["params"][key], str):
                location = svc["params"][key]
                break

    pass1 = {
        "location": location,
        "time_budget_hours": goal.time_budget_hours,
        "interests": [goal.category],
        "reply": f"Got it, planning around {goal.utterance!r}.",
    }
    pass2 = {
        "hypotheses": [
            {
                "statement": goal.utterance,
                "breadth": "concrete" if goal.category == "concrete" else "broad",
                "services": identified,
            }
        ],
        "preferences": {"goal": goal.id},
        "turns": [
            {"kind": "proactive_suggestion", "text": "Here is what I would line up for you.", "asks": []}
        ],
    }
    pass3 = {"services": identified, "message": "Shall we lock this plan in?"}

    entries = [
        {"match": "context aggregation stage", "response": json.dumps(pass1)},
        {"match": "goal formulation stage", "response": json.dumps(pass2)},
        {"match": "proposal verification stage", "response": json.dumps(pass3)},
    ]
    specs = {d.name: spec for d, spec in load_builtin_services()}
    definitions = {d.name: d for d, _ in load_builtin_services()}
    for name in sorted(set(rotation)):
        if name not in {s["name"] for s in identified} or name not in specs:
            continue
        requirement = f"{name.replace('_', ' ')}: {definitions[name].description}"
        entries.append(
            {
                "match": f"Requirement: {requirement}",
                "response": json.dumps(specs[name].to_json()),
            }
        )
    return MockScript.from_json(entries)


class ScriptedTourist:
    """Tourist agent: the goal utterance, one acknowledgement, then confirm."""

    def __init__(self, goal: TouristGoal):
        self._turns = [goal.utterance, TOURIST_ACK, "confirm"]
        self._i = 0

    def next_message(self, envelope: dict | None = None) -> str | None:
        if self._i >= len(self._turns):
            return None
        msg = self._turns[self._i]
        self._i += 1
        return msg


class LiveTourist:
    """LLM-backed tourist persona for live-mode runs; same agent interface."""

    def __init__(self, goal: TouristGoal, gateway):
        self.goal = goal
        self.gateway = gateway
        self._i = 0

    def next_message(self, envelope: dict | None = None) -> str | None:
        from .llm import CompletionRequest

        if self._i == 0:
            self._i += 1
            return self.goal.utterance
        if self._i > 6:
            return None
        self._i += 1
        system = (
            f"You are a tourist whose goal is: {self.goal.utterance}. "
            f"You have {self.goal.time_budget_hours} hours. Reply in one sentence; "
            "say 'confirm' once the assistant proposes a plan you like."
        )
        last = json.dumps((envelope or {}).get("turns", []))
        text, _, _ = self.gateway.complete(
            CompletionRequest(system_prompt=system, messages=(("user", last),))
        )
        return text.strip()


# ---------------------------------------------------------------------------
# Scoring
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RunScore:
    precision: float
    recall: float
    f1: float
    parameter_accuracy: float


def score_run(
    identified: set[str] | frozenset[str],
    bindings: dict[str, dict[str, Any]],
    truth_services: set[str] | frozenset[str],
    truth_params: dict[str, dict[str, Any]],
) -> RunScore:
    """Precision/recall/F1 over service sets, parameter accuracy over the
    ground-truth pairs of correctly identified services."""
    identified = set(identified)
    truth = set(truth_services)
    correct = identified & truth

    if identified:
        precision = len(correct) / len(identified)
    else:
        precision = 1.0 if not truth else 0.0
    recall = len(correct) / len(truth) if truth else 1.0
    f1 = (2 * precision * recall / (precision + recall)) if (precision + recall) > 0 else 0.0

    pairs = 0
    hits = 0
    for svc in correct:
        for param, expected in truth_params.get(svc, {}).items():
            pairs += 1
            if bindings.get(svc, {}).get(param) == expected:
                hits += 1
    param_acc = hits / pairs if pairs else 0.0
    return RunScore(precision, recall, f1, param_acc)


def aggregate(scores: list[tuple[str, RunScore]]) -> dict:
    """Macro-average per category and overall. `scores` pairs a category with
    each run's score."""
    if not scores:
        return {"per_category": {}, "overall": None, "averaging": _AVERAGING_NOTE}

    def mean_block(items: list[RunScore]) -> dict:
        n = len(items)
        return {
            "precision": round(sum(s.precision for s in items) / n, 6),
            "recall": round(sum(s.recall for s in items) / n, 6),
            "f1": round(sum(s.f1 for s in items) / n, 6),
            "parameter_accuracy": round(sum(s.parameter_accuracy for s in items) / n, 6),
            "runs": n,
        }

    by_cat: dict[str, list[RunScore]] = {}
    for category, score in scores:
        by_cat.setdefault(category, []).append(score)
    return {
        "per_category": {c: mean_block(v) for c, v in sorted(by_cat.items())},
        "overall": mean_block([s for _, s in scores]),
        "averaging": _AVERAGING_NOTE,
    }


_AVERAGING_NOTE = "macro: F1 averaged per run, not recomputed from averaged P and R"


def coefficient_of_variation(
    samples: Iterable[float] | None = None, *, mean: float | None = None, sd: float | None = None
) -> float:
    """(sample standard deviation / mean) x 100, as a percentage."""
    if samples is not None:
        data = list(samples)
        mean = statistics.fmean(data)
        sd = statistics.stdev(data) if len(data) > 1 else 0.0
    if mean == 0:
        raise ZeroMean("coefficient of variation undefined for zero mean")
    return sd / mean * 100.0


# ---------------------------------------------------------------------------
# Token scaling curve
# ---------------------------------------------------------------------------

def token_scaling_curve(registry_sizes: Iterable[int], goal_utterance: str) -> list[tuple[int, int]]:
    """Prompt-token count of the pass-1 + refiner prompts as the registry grows.

    Measures prompt construction only (no model behaviour), so it runs
    entirely offline.
    """
    definitions = [d for d, _ in load_builtin_services()]
    user = UserProfile(user_id="curve_probe", current_location="Charminar")
    series: list[tuple[int, int]] = []
    for n in registry_sizes:
        subset = definitions[:n]
        snapshot = ContextSnapshot(
            sensor_view=(), user=user, services=tuple(subset), state="curve", registry_version=n
        )
        p1 = build_pass_prompt("pass1", goal_utterance, snapshot, "")
        refine = build_refiner_prompt(goal_utterance, subset)
        tokens = sum(classify_tokens(p1)) + sum(classify_tokens(refine))
        series.append((n, tokens))
    return series


# ---------------------------------------------------------------------------
# Batch orchestration
# ---------------------------------------------------------------------------

@dataclass
class RunRecord:
    goal_id: str
    run_index: int
    category: str
    identified: list[dict] = field(default_factory=list)
    truth_services: list[str] = field(default_factory=list)
    truth_params: dict[str, dict] = field(default_factory=dict)
    usage: TokenUsage = field(default_factory=TokenUsage)
    durations: dict[str, float] = field(default_factory=dict)
    generation: list[dict] = field(default_factory=list)
    app_sections: int = 0
    error: str | None = None

    def to_json(self) -> dict:
        return {
            "goal_id": self.goal_id,
            "run_index": self.run_index,
            "category": self.category,
            "identified": self.identified,
            "truth_services": sorted(self.truth_services),
            "truth_params": self.truth_params,
            "usage": self.usage.to_json(),
            "durations": {k: round(v, 6) for k, v in sorted(self.durations.items())},
            "generation": self.generation,
            "app_sections": self.app_sections,
            "error": self.error,
        }


def run_simulation(
    corpus: list[TouristGoal],
    n_runs: int,
    provider: ProviderConfig | None = None,
    rotation: Iterable[str] = (),
    seed: int = 0,
    sample_one: bool = False,
    work_dir: str | Path | None = None,
    noise: bool = True,
) -> list[RunRecord]:
    """Execute the full pipeline for every goal, `n_runs` times.

    Mock mode is deterministic for a fixed seed: the engine runs on a
    simulated clock and sequential ids, and every Guide reply is scripted.
    Pipeline failures land in the run's record instead of aborting the batch.
    """
    provider = provider or ProviderConfig(mode="mock")
    rotation = sorted(set(rotation))
    rng = random.Random(seed)
    if work_dir is None:
        work_dir = tempfile.mkdtemp(prefix="simbench-")

    counter = itertools.count(1)
    engine = Engine(
        data_dir=work_dir,
        provider=provider,
        clock=SimulatedClock(),
        id_factory=lambda: f"s{next(counter):05d}",
    )
    for name in rotation:
        engine.runtime.set_status(name, "offline")

    records: list[RunRecord] = []
    for run_index in range(n_runs):
        goals = [rng.choice(corpus)] if sample_one else corpus
        for goal in goals:
            records.append(_run_goal(engine, goal, run_index, rotation, noise))
    return records


def _run_goal(
    engine: Engine, goal: TouristGoal, run_index: int, rotation: list[str], noise: bool
) -> RunRecord:
    record = RunRecord(
        goal_id=goal.id,
        run_index=run_index,
        category=goal.category,
        truth_services=sorted(goal.truth_services),
        truth_params={s: goal.params_for(s) for s in sorted(goal.truth_services)},
    )
    script = synthesize_goal_script(goal, rotation=rotation, noise=noise)
    try:
        user = UserProfile(user_id=f"tourist_{goal.id}_{run_index}", current_location="Charminar")
        session, _ = engine.create_session(user, script=script)
        if engine.provider.mode == "live":
            tourist = LiveTourist(goal, session.gateway)
        else:
            tourist = ScriptedTourist(goal)
        sid = session.state.session_id
        while session.state.phase != DialoguePass.CONFIRMED:
            message = tourist.next_message(engine.envelope(session))
            if message is None:
                raise RuntimeError("tourist ran out of turns before confirmation")
            session, _ = engine.handle_message(sid, message)
        record.identified = [si.to_json() for si in session.g_user()]
        record.usage = session.gateway.usage_total()
        metrics = engine.metrics.sessions.get(sid)
        if metrics:
            record.durations = {**metrics.stages, "generation": metrics.generation_seconds}
        record.generation = engine.generation_log.get(sid, [])
        app = engine.builder.get(session.app_url.rsplit("/", 1)[-1]) if session.app_url else None
        record.app_sections = len(app.sections) if app else 0
    except Exception as exc:  # recorded, not fatal to the batch
        record.error = f"{type(exc).__name__}: {exc}"
    return record


# ---------------------------------------------------------------------------
# Reporting
# ---------------------------------------------------------------------------

def _mean_sd(values: list[float]) -> dict:
    if not values:
        return {"mean": 0.0, "sd": 0.0}
    sd = statistics.stdev(values) if len(values) > 1 else 0.0
    return {"mean": round(statistics.fmean(values), 6), "sd": round(sd, 6)}


def build_report(records: list[RunRecord], seed: int = 0, rotation: Iterable[str] = ()) -> dict:
    scored = []
    for rec in records:
        if rec.error:
            continue
        identified = {si["name"] for si in rec.identified}
        bindings = {si["name"]: si["params"] for si in rec.identified}
        scored.append(
            (
                rec.category,
                score_run(identified, bindings, set(rec.truth_services), rec.truth_params),
            )
        )

    durations = {}
    for stage in (*STAGES, "generation"):
        durations[stage] = _mean_sd([r.durations.get(stage, 0.0) for r in records if not r.error])
    totals = [float(r.usage.total()) for r in records if not r.error]
    total_durations = [
        sum(v for k, v in r.durations.items()) for r in records if not r.error
    ]
    cv: dict[str, float | None] = {}
    for label, values in (("total_tokens", totals), ("total_duration", total_durations)):
        try:
            cv[label] = round(coefficient_of_variation(values), 4) if values else None
        except ZeroMean:
            cv[label] = None

    generated = sorted(
        {g["resolved"] for r in records for g in r.generation if g.get("generated")}
    )
    generation_runs = sum(1 for r in records if r.generation)

    return {
        "seed": seed,
        "rotation": sorted(set(rotation)),
        "runs": len({r.run_index for r in records}),
        "goals": len({r.goal_id for r in records}),
        "records": len(records),
        "errors": sum(1 for r in records if r.error),
        "identification": aggregate(scored),
        "stage_durations_seconds": durations,
        "tokens": {
            "total": _mean_sd(totals),
            "by_class": {
                "input": _mean_sd([float(r.usage.input_tokens) for r in records if not r.error]),
                "processing": _mean_sd(
                    [float(r.usage.processing_tokens) for r in records if not r.error]
                ),
                "completion": _mean_sd(
                    [float(r.usage.completion_tokens) for r in records if not r.error]
                ),
            },
        },
        "cv_pct": cv,
        "generated_services": generated,
        "generation_runs": generation_runs,
    }


def report_json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True)
