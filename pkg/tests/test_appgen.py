from __future__ import annotations

import itertools
import re
import statistics

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from goalforge.appgen import AppBuilder, discover, dispatch_shape, render, render_payload
from goalforge.clock import WallClock
from goalforge.dialogue import IdentifiedService
from goalforge.knowledge import ServiceDefinition
from goalforge.runtime import ServiceResult

from datetime import datetime, timezone

NOW = datetime(2025, 1, 1, tzinfo=timezone.utc)

FRAGMENT_CLASSES = {"metric": "metric-card", "list": "item-list", "dict": "kv-rows", "text": "text-block"}


def si(name, params):
    return IdentifiedService.make(name, params)


def builder_for(seeded, wall=False):
    store, rt, clock = seeded
    ids = itertools.count(1)
    return AppBuilder(rt, clock=WallClock() if wall else clock, id_factory=lambda: f"app{next(ids)}")


NINE_BINDINGS = {
    "historical_info": {"site_name": ["Charminar", "Golconda Fort"]},
    "restaurant_finder": {"location": "Laad Bazaar", "cuisine": "Any", "diet": "Non-vegetarian"},
    "crowd_monitor": {"location": "Charminar", "time": "now"},
    "air_quality": {"location": "Charminar"},
    "water_quality": {"location": "Golconda Fort"},
    "event_notifier": {"category": "music"},
    "travel_options": {"destination": "Golconda Fort"},
    "exhibition_tracker": {"theme": "textiles"},
    "ticket_purchase": {"event_name": "Ramoji Film City"},
}


# -- discovery ---------------------------------------------------------------------


def test_discover_running_example_both_matched(seeded):
    store, _, _ = seeded
    g_user = [
        si("historical_info", {"site_name": ["Charminar"]}),
        si("restaurant_finder", {"location": "Laad Bazaar", "cuisine": "Any", "diet": "Any"}),
    ]
    match_set, unmatched = discover(g_user, tuple(store.list_services()))
    assert unmatched == []
    assert match_set.matches_for("historical_info")[0] == "historical_info"
    assert match_set.matches_for("restaurant_finder")[0] == "restaurant_finder"


def test_discover_unknown_service_unmatched(seeded):
    store, _, _ = seeded
    g_user = [si("hologram_tours", {"site": "Charminar"})]
    match_set, unmatched = discover(g_user, tuple(store.list_services()))
    assert [u.name for u in unmatched] == ["hologram_tours"]
    assert match_set.matches_for("hologram_tours") == ()


def test_discover_empty_goal_set(seeded):
    store, _, _ = seeded
    match_set, unmatched = discover([], tuple(store.list_services()))
    assert match_set.per_service == () and unmatched == []


def test_discover_offline_service_unmatched(seeded):
    store, _, _ = seeded
    g_user = [si("crowd_monitor", {"location": "Charminar", "time": "now"})]
    _, unmatched = discover(g_user, tuple(store.list_services()), offline=frozenset({"crowd_monitor"}))
    assert [u.name for u in unmatched] == ["crowd_monitor"]


def test_discover_param_coverage_required(seeded):
    store, _, _ = seeded
    # same description, but the request binds a param the service lacks
    g_user = [si("historical_info", {"site_name": ["Charminar"], "century": "16th"})]
    _, unmatched = discover(g_user, tuple(store.list_services()))
    assert len(unmatched) == 1


def test_discover_monotone_in_registry(seeded):
    store, _, _ = seeded
    services = tuple(store.list_services())
    g_user = [
        si("historical_info", {"site_name": ["Charminar"]}),
        si("crowd_monitor", {"location": "Charminar", "time": "now"}),
    ]
    base, _ = discover(g_user, services)
    extra = ServiceDefinition(
        name="zz_extra", description="an unrelated helper", endpoint="/svc/zz_extra"
    )
    grown, _ = discover(g_user, services + (extra,))
    for name, matches in base.per_service:
        assert set(matches) <= set(grown.matches_for(name))


# -- renderer dispatch -----------------------------------------------------------------


def test_render_metric_card():
    frag = render(ServiceResult(shape="metric", payload=0.42, produced_at=NOW), "crowd_monitor")
    assert 'class="metric-card"' in frag and "0.42" in frag and "crowd monitor" in frag


def test_render_two_item_list():
    rows = [{"name": "Shadab"}, {"name": "Hotel Rumaan"}]
    frag = render(ServiceResult(shape="list", payload=rows, produced_at=NOW), "restaurant_finder")
    assert 'class="item-list"' in frag
    assert frag.count("<li>") == 2


def test_render_dict_rows():
    frag = render(
        ServiceResult(shape="dict", payload={"price": 140.0, "availability": "open"}, produced_at=NOW),
        "ticket_purchase",
    )
    assert 'class="kv-rows"' in frag and "<tr>" in frag


def test_render_text_fallback():
    frag = render(ServiceResult(shape="text", payload="plain string", produced_at=NOW), "note")
    assert 'class="text-block"' in frag and "plain string" in frag


def test_render_escapes_markup():
    frag = render_payload("<script>alert(1)</script>", "attack")
    assert "<script>" not in frag


ADVERSARIAL = st.one_of(
    st.none(),
    st.booleans(),
    st.integers(),
    st.floats(allow_nan=True, allow_infinity=True),
    st.text(),
    st.lists(st.one_of(st.integers(), st.text(), st.dictionaries(st.text(), st.integers())), max_size=5),
    st.dictionaries(st.text(), st.one_of(st.integers(), st.text()), max_size=5),
    st.tuples(st.integers(), st.text()),
    st.binary(),
)


@given(payload=ADVERSARIAL)
@settings(max_examples=300, deadline=None)
def test_renderer_totality_and_exclusivity(payload):
    arms = []
    if isinstance(payload, bool):
        arms.append("text")
    elif isinstance(payload, (int, float)):
        arms.append("metric")
    elif isinstance(payload, (list, tuple)):
        arms.append("list")
    elif isinstance(payload, dict):
        arms.append("dict")
    else:
        arms.append("text")
    arm = dispatch_shape(payload)
    assert arm in FRAGMENT_CLASSES
    assert [arm] == arms  # exactly one arm, the expected one
    frag = render_payload(payload, "probe")
    root = re.match(r'<section class="([a-z-]+)"', frag)
    assert root and root.group(1) == FRAGMENT_CLASSES[arm]


def test_render_deterministic_per_input():
    payload = {"b": 2, "a": 1}
    assert render_payload(payload, "svc") == render_payload(payload, "svc")


# -- build -------------------------------------------------------------------------------


def test_build_running_example_two_sections_in_order(seeded):
    builder = builder_for(seeded)
    g_user = [
        si("historical_info", {"site_name": ["Charminar", "Laad Bazaar"]}),
        si("restaurant_finder", {"location": "Laad Bazaar", "cuisine": "Any", "diet": "Non-vegetarian"}),
    ]
    app = builder.build(g_user)
    assert [s.service for s in app.sections] == ["historical_info", "restaurant_finder"]
    assert [s.shape for s in app.sections] == ["list", "list"]


def test_build_nine_sections_records_time(seeded):
    builder = builder_for(seeded)
    g_user = [si(name, params) for name, params in NINE_BINDINGS.items()]
    app = builder.build(g_user)
    assert len(app.sections) == 9
    assert app.build_ms > 0


def test_build_offline_service_becomes_error_section(seeded):
    store, rt, _ = seeded
    rt.set_status("crowd_monitor", "offline")
    builder = builder_for(seeded)
    g_user = [
        si("historical_info", {"site_name": ["Charminar"]}),
        si("crowd_monitor", {"location": "Charminar", "time": "now"}),
    ]
    app = builder.build(g_user)
    shapes = {s.service: s.shape for s in app.sections}
    assert shapes["crowd_monitor"] == "error"
    assert shapes["historical_info"] == "list"
    assert 'class="error"' in app.sections[1].fragment


def test_build_resolved_replacement_answers(seeded):
    store, rt, _ = seeded
    builder = builder_for(seeded)
    g_user = [si("crowd_monitor", {"location": "Charminar", "time": "now"})]
    app = builder.build(g_user, resolved={"crowd_monitor": "crowd_monitor"})
    assert app.sections[0].shape == "metric"


@pytest.mark.parametrize("perm", list(itertools.permutations(["historical_info", "crowd_monitor", "air_quality"])))
def test_composition_order_follows_goal_order(seeded, perm):
    builder = builder_for(seeded)
    g_user = [si(name, NINE_BINDINGS[name]) for name in perm]
    app = builder.build(g_user)
    assert [s.service for s in app.sections] == list(perm)


def test_build_time_under_50ms_median(seeded):
    builder = builder_for(seeded, wall=True)
    g_user = [si(name, params) for name, params in NINE_BINDINGS.items()]
    times = []
    for _ in range(100):
        app = builder.build(g_user)
        times.append(app.build_ms)
    assert statistics.median(times) < 50.0


# -- hosting --------------------------------------------------------------------------------


def test_host_then_fetch_roundtrip(seeded):
    builder = builder_for(seeded)
    app = builder.build([si("historical_info", {"site_name": ["Charminar"]})])
    url = builder.host(app)
    assert url == app.url
    assert builder.get(app.app_id).serialize() == app.serialize()


def test_two_apps_distinct_urls(seeded):
    builder = builder_for(seeded)
    a = builder.build([si("historical_info", {"site_name": ["Charminar"]})])
    b = builder.build([si("historical_info", {"site_name": ["Charminar"]})])
    assert builder.host(a) != builder.host(b)


def test_hosted_app_is_snapshot_despite_later_ingest(seeded):
    store, rt, clock = seeded
    builder = builder_for(seeded)
    app = builder.build([si("crowd_monitor", {"location": "Charminar", "time": "now"})])
    builder.host(app)
    before = builder.get(app.app_id).serialize()

    from goalforge.knowledge import SensorReading
    from datetime import timedelta

    latest = store.latest_readings()["cd-01"]
    store.ingest_reading(
        SensorReading(
            sensor_id="cd-01", kind="crowd_density", value=0.99, unit="ratio",
            timestamp=latest.timestamp + timedelta(minutes=5), location="Charminar",
        )
    )
    assert builder.get(app.app_id).serialize() == before


def test_render_document_fills_template_slots(seeded):
    builder = builder_for(seeded)
    app = builder.build([si("historical_info", {"site_name": ["Charminar"]})], title="Trip & plan")
    doc = builder.render_document(app)
    assert "<title>Trip &amp; plan</title>" in doc
    assert 'class="item-list"' in doc
    assert "{{" not in doc  # every slot filled
