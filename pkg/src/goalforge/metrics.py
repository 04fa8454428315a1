"""Per-session stage timing and token accounting, plus the aggregate export."""

from __future__ import annotations

import io
import csv
from dataclasses import dataclass, field

from .llm import TokenUsage

# Disjoint stages of one application generation, in pipeline order.
STAGES = ("dialogue", "identification", "rendering", "deployment")


def token_shares(input_mean: float, processing_mean: float, completion_mean: float) -> tuple[float, float, float]:
    """Percent of total per token class, rounded to 2 decimals."""
    total = input_mean + processing_mean + completion_mean
    if total == 0:
        return (0.0, 0.0, 0.0)
    return (
        round(100.0 * input_mean / total, 2),
        round(100.0 * processing_mean / total, 2),
        round(100.0 * completion_mean / total, 2),
    )


def compose_totals(a: float, b: float) -> float:
    """Combine two stage means into one reported total (2-decimal convention)."""
    return round(a + b, 2)


@dataclass
class SessionMetrics:
    stages: dict[str, float] = field(default_factory=lambda: {s: 0.0 for s in STAGES})
    generation_seconds: float = 0.0  # tracked apart from the four stages
    usage: TokenUsage = field(default_factory=TokenUsage)
    build_ms: list[float] = field(default_factory=list)
    llm_calls: int = 0

    def total_seconds(self) -> float:
        return sum(self.stages.values())

    def to_json(self) -> dict:
        total = self.total_seconds()
        shares = {
            s: (round(100.0 * v / total, 2) if total else 0.0) for s, v in self.stages.items()
        }
        return {
            "stages_seconds": {s: round(v, 6) for s, v in self.stages.items()},
            "stage_shares_pct": shares,
            "generation_seconds": round(self.generation_seconds, 6),
            "tokens": self.usage.to_json(),
            "tokens_total": self.usage.total(),
            "build_ms": [round(b, 4) for b in self.build_ms],
            "llm_calls": self.llm_calls,
        }


class MetricsCollector:
    def __init__(self):
        self.sessions: dict[str, SessionMetrics] = {}

    def session(self, session_id: str) -> SessionMetrics:
        return self.sessions.setdefault(session_id, SessionMetrics())

    def add_stage(self, session_id: str, stage: str, seconds: float) -> None:
        m = self.session(session_id)
        if stage == "generation":
            m.generation_seconds += seconds
        else:
            m.stages[stage] += seconds

    def add_usage(self, session_id: str, usage: TokenUsage) -> None:
        m = self.session(session_id)
        m.usage = m.usage + usage
        m.llm_calls += 1

    def add_build(self, session_id: str, milliseconds: float) -> None:
        self.session(session_id).build_ms.append(milliseconds)

    def export(self) -> dict:
        per_session = {sid: m.to_json() for sid, m in sorted(self.sessions.items())}
        n = len(self.sessions)
        agg_stages = {s: 0.0 for s in STAGES}
        usage = TokenUsage()
        builds: list[float] = []
        for m in self.sessions.values():
            for s in STAGES:
                agg_stages[s] += m.stages[s]
            usage = usage + m.usage
            builds.extend(m.build_ms)
        stage_means = {s: (agg_stages[s] / n if n else 0.0) for s in STAGES}
        mean_usage = (
            (usage.input_tokens / n, usage.processing_tokens / n, usage.completion_tokens / n)
            if n
            else (0.0, 0.0, 0.0)
        )
        shares = token_shares(*mean_usage)
        return {
            "sessions": per_session,
            "aggregate": {
                "session_count": n,
                "stage_means_seconds": {s: round(v, 6) for s, v in stage_means.items()},
                "tokens_total": usage.to_json(),
                "token_shares_pct": {
                    "input": shares[0],
                    "processing": shares[1],
                    "completion": shares[2],
                },
                "build_ms_mean": round(sum(builds) / len(builds), 4) if builds else 0.0,
            },
            # Dialogue seconds cover system work only; simulated agents reply
            # instantly and human think-time is never on any timer.
            "notes": {"dialogue_excludes_user_think_time": True},
        }

    def export_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(
            ["session_id", *[f"{s}_seconds" for s in STAGES], "input_tokens",
             "processing_tokens", "completion_tokens", "build_ms_mean"]
        )
        for sid, m in sorted(self.sessions.items()):
            build_mean = sum(m.build_ms) / len(m.build_ms) if m.build_ms else 0.0
            writer.writerow(
                [sid, *[round(m.stages[s], 6) for s in STAGES], m.usage.input_tokens,
                 m.usage.processing_tokens, m.usage.completion_tokens, round(build_mean, 4)]
            )
        return buf.getvalue()
