from __future__ import annotations

import itertools
import json
from pathlib import Path

import pytest

from goalforge.clock import SimulatedClock
from goalforge.engine import Engine
from goalforge.fixtures import install
from goalforge.knowledge import KnowledgeStore, UserProfile
from goalforge.llm import MockScript, ProviderConfig
from goalforge.runtime import ServiceRuntime

REPO_ROOT = Path(__file__).resolve().parents[1]
CORPUS_PATH = REPO_ROOT / "corpus" / "goals.json"


@pytest.fixture
def store(tmp_path) -> KnowledgeStore:
    return KnowledgeStore(tmp_path / "empty")


@pytest.fixture
def seeded(tmp_path):
    """A store populated with the 9-service fixture world plus its runtime."""
    s = KnowledgeStore(tmp_path / "seeded")
    clock = SimulatedClock()
    rt = ServiceRuntime(s, clock=clock)
    install(s, rt)
    return s, rt, clock


@pytest.fixture
def make_engine(tmp_path):
    """Deterministic engine factory: simulated clock, sequential ids."""
    dirs = itertools.count(1)

    def factory(script: MockScript | None = None, **kwargs) -> Engine:
        ids = itertools.count(1)
        return Engine(
            data_dir=tmp_path / f"engine{next(dirs)}",
            provider=ProviderConfig(mode="mock"),
            script=script,
            clock=SimulatedClock(),
            id_factory=lambda: f"s{next(ids):04d}",
            **kwargs,
        )

    return factory


@pytest.fixture
def tourist() -> UserProfile:
    return UserProfile(
        user_id="tourist_1",
        current_location="Hyderabad",
        past_activities=("city walk",),
        stated_preferences=(("pace", "relaxed"),),
    )


def running_example_script() -> MockScript:
    """Scripted Guide replies for the 3-hour old-city session."""
    pass1 = {
        "location": "Charminar",
        "time_budget_hours": 3,
        "interests": ["history"],
        "reply": "Three hours is perfect for the old city.",
    }
    pass2 = {
        "hypotheses": [
            {
                "statement": "heritage walk with dining",
                "breadth": "concrete",
                "services": [
                    {"name": "historical_info", "params": {"site_name": ["Charminar", "Laad Bazaar"]}},
                    {
                        "name": "restaurant_finder",
                        "params": {"location": "Laad Bazaar", "cuisine": "Any", "diet": "Non-vegetarian"},
                    },
                ],
            }
        ],
        "preferences": {"diet": "Non-vegetarian"},
        "turns": [
            {
                "kind": "proactive_suggestion",
                "text": "Charminar and Laad Bazaar, with dinner on the way.",
                "asks": [],
            }
        ],
    }
    pass3 = {
        "services": [
            {"name": "historical_info", "params": {"site_name": ["Charminar", "Laad Bazaar"]}},
            {
                "name": "restaurant_finder",
                "params": {"location": "Laad Bazaar", "cuisine": "Any", "diet": "Non-vegetarian"},
            },
        ],
        "message": "A heritage walk plus a Laad Bazaar dinner.",
    }
    return MockScript.from_json(
        [
            {"match": "context aggregation stage", "response": json.dumps(pass1)},
            {"match": "goal formulation stage", "response": json.dumps(pass2)},
            {"match": "proposal verification stage", "response": json.dumps(pass3)},
        ]
    )


RUNNING_EXAMPLE_QUERY = "I have 3 hours to explore Hyderabad's old charm"

THETA_Q = {
    "historical_info": {"site_name": ["Charminar", "Laad Bazaar"]},
    "restaurant_finder": {"location": "Laad Bazaar", "cuisine": "Any", "diet": "Non-vegetarian"},
}


def drive_running_example(engine: Engine, user: UserProfile):
    """Create a session and drive it to Confirmed with the scripted transcript."""
    session, _ = engine.create_session(user)
    sid = session.state.session_id
    engine.handle_message(sid, RUNNING_EXAMPLE_QUERY)
    engine.handle_message(sid, "also want food nearby")
    engine.handle_message(sid, "confirm")
    return session
