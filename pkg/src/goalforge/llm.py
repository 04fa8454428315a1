"""Completion gateway: one interface over a live OpenAI-compatible backend
and a deterministic scripted mock, with per-call token and latency accounting.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .clock import WallClock
from .errors import BackendError, GatewayTimeout, MalformedJson, MockScriptMiss

ENV_MODE = "GOALFORGE_LLM_MODE"
ENV_BASE_URL = "GOALFORGE_LLM_BASE_URL"
ENV_MODEL = "GOALFORGE_LLM_MODEL"
ENV_KEY = "GOALFORGE_LLM_KEY"


@dataclass(frozen=True)
class ProviderConfig:
    mode: str = "mock"                      # "live" | "mock"
    base_url: str = ""
    model_name: str = "gpt-4o-mini"
    temperature: float = 0.7
    timeout: float = 60.0
    api_key_env: str = ENV_KEY
    token_factor: float = 1.0               # words -> token units in mock mode

    def __post_init__(self):
        if self.mode not in ("live", "mock"):
            raise ValueError(f"unknown provider mode: {self.mode!r}")
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError("temperature must be in [0, 2]")
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")

    @classmethod
    def from_env(cls) -> "ProviderConfig":
        return cls(
            mode=os.environ.get(ENV_MODE, "mock"),
            base_url=os.environ.get(ENV_BASE_URL, ""),
            model_name=os.environ.get(ENV_MODEL, "gpt-4o-mini"),
        )


@dataclass(frozen=True)
class CompletionRequest:
    system_prompt: str
    messages: tuple[tuple[str, str], ...]   # (role, text), roles alternate from "user"
    response_format: str = "free_text"      # "free_text" | "json"

    def __post_init__(self):
        if not self.messages:
            raise ValueError("messages must be non-empty")
        expected = "user"
        for role, _ in self.messages:
            if role != expected:
                raise ValueError("roles must alternate user/assistant starting from user")
            expected = "assistant" if expected == "user" else "user"
        if self.response_format not in ("free_text", "json"):
            raise ValueError(f"unknown response_format: {self.response_format!r}")

    def user_text(self) -> str:
        return "\n".join(text for role, text in self.messages if role == "user")

    def non_user_text(self) -> str:
        assistant = "\n".join(text for role, text in self.messages if role == "assistant")
        return self.system_prompt + ("\n" + assistant if assistant else "")

    def full_text(self) -> str:
        return self.system_prompt + "\n" + "\n".join(t for _, t in self.messages)


@dataclass(frozen=True)
class TokenUsage:
    input_tokens: int = 0
    processing_tokens: int = 0
    completion_tokens: int = 0

    def __post_init__(self):
        if min(self.input_tokens, self.processing_tokens, self.completion_tokens) < 0:
            raise ValueError("token counts must be non-negative")

    def total(self) -> int:
        return self.input_tokens + self.processing_tokens + self.completion_tokens

    def __add__(self, other: "TokenUsage") -> "TokenUsage":
        return TokenUsage(
            self.input_tokens + other.input_tokens,
            self.processing_tokens + other.processing_tokens,
            self.completion_tokens + other.completion_tokens,
        )

    def to_json(self) -> dict:
        return {
            "input": self.input_tokens,
            "processing": self.processing_tokens,
            "completion": self.completion_tokens,
        }

    @classmethod
    def from_json(cls, d: dict) -> "TokenUsage":
        return cls(d.get("input", 0), d.get("processing", 0), d.get("completion", 0))


def word_count(text: str) -> int:
    return len(text.split())


def classify_tokens(req: CompletionRequest, factor: float = 1.0) -> tuple[int, int]:
    """Split prompt tokens into user-authored (input) and injected (processing).

    Uses a deterministic whitespace word count times `factor`; the live
    backend's own prompt count is split proportionally by the same rule.
    """
    return (
        int(word_count(req.user_text()) * factor),
        int(word_count(req.non_user_text()) * factor),
    )


# ---------------------------------------------------------------------------
# Mock scripting
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScriptEntry:
    response: str
    match: str | None = None        # substring of the rendered request
    seq: int | None = None          # 0-based call index
    usage: TokenUsage | None = None

    def matches(self, request_text: str, call_index: int) -> bool:
        if self.seq is not None and self.seq == call_index:
            return True
        return self.match is not None and self.match in request_text


@dataclass
class MockScript:
    entries: list[ScriptEntry] = field(default_factory=list)

    def __post_init__(self):
        if not self.entries:
            raise ValueError("mock script needs at least one entry")

    @classmethod
    def from_json(cls, data: list[dict]) -> "MockScript":
        entries = []
        for d in data:
            usage = TokenUsage.from_json(d["usage"]) if "usage" in d else None
            entries.append(
                ScriptEntry(response=d["response"], match=d.get("match"), seq=d.get("seq"), usage=usage)
            )
        return cls(entries)

    @classmethod
    def load(cls, path: str | Path) -> "MockScript":
        return cls.from_json(json.loads(Path(path).read_text()))

    def find(self, request_text: str, call_index: int) -> ScriptEntry:
        for entry in self.entries:
            if entry.matches(request_text, call_index):
                return entry
        raise MockScriptMiss(f"no script entry matched call {call_index}")


@dataclass
class CallRecord:
    ok: bool
    latency: float
    usage: TokenUsage
    error: str | None = None


class LlmGateway:
    """Per-session completion client. Stateless apart from the mock cursor
    and the call log, so each dialogue session owns its own instance.
    """

    def __init__(self, config: ProviderConfig, script: MockScript | None = None, clock=None):
        if config.mode == "mock" and script is None:
            raise ValueError("mock mode requires a script")
        self.config = config
        self.script = script
        self.clock = clock or WallClock()
        self.calls: list[CallRecord] = []
        self._cursor = 0

    # -- public API ---------------------------------------------------------

    def complete(self, req: CompletionRequest) -> tuple[str, TokenUsage, float]:
        t0 = self.clock.ticks()
        try:
            if self.config.mode == "mock":
                text, usage = self._complete_mock(req)
            else:
                text, usage = self._complete_live(req)
        except Exception as exc:
            latency = self.clock.ticks() - t0
            self.calls.append(CallRecord(ok=False, latency=latency, usage=TokenUsage(), error=str(exc)))
            raise
        latency = self.clock.ticks() - t0
        if req.response_format == "json":
            try:
                json.loads(text)
            except (json.JSONDecodeError, ValueError):
                self.calls.append(CallRecord(ok=False, latency=latency, usage=usage, error="malformed json"))
                raise MalformedJson(text)
        self.calls.append(CallRecord(ok=True, latency=latency, usage=usage))
        return text, usage, latency

    def usage_total(self) -> TokenUsage:
        total = TokenUsage()
        for c in self.calls:
            total = total + c.usage
        return total

    # -- mock ----------------------------------------------------------------

    def _complete_mock(self, req: CompletionRequest) -> tuple[str, TokenUsage]:
        entry = self.script.find(req.full_text(), self._cursor)
        self._cursor += 1
        if entry.usage is not None:
            usage = entry.usage
        else:
            inp, proc = classify_tokens(req, self.config.token_factor)
            usage = TokenUsage(inp, proc, int(word_count(entry.response) * self.config.token_factor))
        return entry.response, usage

    # -- live ----------------------------------------------------------------

    def _complete_live(self, req: CompletionRequest) -> tuple[str, TokenUsage]:
        import httpx

        key = os.environ.get(self.config.api_key_env, "")
        payload: dict[str, Any] = {
            "model": self.config.model_name,
            "temperature": self.config.temperature,
            "messages": [{"role": "system", "content": req.system_prompt}]
            + [{"role": role, "content": text} for role, text in req.messages],
        }
        if req.response_format == "json":
            payload["response_format"] = {"type": "json_object"}
        url = self.config.base_url.rstrip("/") + "/chat/completions"
        headers = {"Authorization": f"Bearer {key}"} if key else {}

        last_timeout: Exception | None = None
        for _ in range(2):  # one retry on timeout, identical request
            try:
                resp = httpx.post(url, json=payload, headers=headers, timeout=self.config.timeout)
                break
            except httpx.TimeoutException as exc:
                last_timeout = exc
        else:
            raise GatewayTimeout(str(last_timeout))

        if resp.status_code != 200:
            raise BackendError(resp.status_code, resp.text)
        body = resp.json()
        text = body["choices"][0]["message"]["content"]
        usage = body.get("usage", {})
        prompt_tokens = int(usage.get("prompt_tokens", 0))
        completion_tokens = int(usage.get("completion_tokens", 0))
        # Split the backend's prompt count by the deterministic word-count rule.
        user_words = word_count(req.user_text())
        other_words = word_count(req.non_user_text())
        denom = max(user_words + other_words, 1)
        input_tokens = round(prompt_tokens * user_words / denom)
        return text, TokenUsage(input_tokens, prompt_tokens - input_tokens, completion_tokens)
