"""HTTP surface: sessions and dialogue, app retrieval, per-service routes,
feedback capture and metrics export. JSON everywhere; metrics also as CSV.
"""

from __future__ import annotations

from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.responses import HTMLResponse, JSONResponse, PlainTextResponse

from .engine import Engine
from .errors import (
    EmptyResult,
    ExtractionParseError,
    GoalForgeError,
    IllegalTransition,
    MissingParam,
    ServiceOffline,
    UnknownService,
)
from .knowledge import UserProfile

FEEDBACK_RATINGS = ("application_rating", "accuracy_rating", "relevance_rating")


def create_app(engine: Engine, frontend_dir: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="goalforge", version="0.1.0")

    def bad_request(detail: str) -> JSONResponse:
        return JSONResponse({"error": detail}, status_code=400)

    @app.post("/session", status_code=201)
    async def create_session(request: Request):
        try:
            body = await request.json()
        except Exception:
            return bad_request("body must be JSON")
        if not isinstance(body, dict) or not isinstance(body.get("user_id"), str) or not body["user_id"]:
            return bad_request("user_id is required")
        try:
            profile = UserProfile.from_json(body)
        except (ValueError, TypeError, AttributeError) as exc:
            return bad_request(f"invalid profile: {exc}")
        session, turns = engine.create_session(profile, initial_query=body.get("query", ""))
        return engine.envelope(session, turns)

    @app.post("/session/{session_id}/message")
    async def post_message(session_id: str, request: Request):
        try:
            body = await request.json()
        except Exception:
            return bad_request("body must be JSON")
        text = body.get("text") if isinstance(body, dict) else None
        if not isinstance(text, str):
            return bad_request("text is required")
        try:
            session, turns = engine.handle_message(session_id, text)
        except KeyError:
            return JSONResponse({"error": "unknown session"}, status_code=404)
        except IllegalTransition as exc:
            return JSONResponse({"error": str(exc)}, status_code=409)
        except ExtractionParseError as exc:
            return JSONResponse({"error": str(exc), "raw": exc.raw}, status_code=502)
        return engine.envelope(session, turns)

    @app.get("/session/{session_id}")
    async def get_session(session_id: str):
        session = engine.manager.get(session_id)
        if session is None:
            return JSONResponse({"error": "unknown session"}, status_code=404)
        return engine.envelope(session)

    @app.get("/session/{session_id}/transcript")
    async def get_transcript(session_id: str):
        session = engine.manager.get(session_id)
        if session is None:
            return JSONResponse({"error": "unknown session"}, status_code=404)
        return session.transcript()

    @app.post("/session/{session_id}/feedback", status_code=201)
    async def post_feedback(session_id: str, request: Request):
        if engine.manager.get(session_id) is None:
            return JSONResponse({"error": "unknown session"}, status_code=404)
        try:
            body = await request.json()
        except Exception:
            return bad_request("body must be JSON")
        record = {**(body if isinstance(body, dict) else {}), "session_id": session_id}
        try:
            engine.add_feedback(record)
        except ValueError as exc:
            return bad_request(str(exc))
        except FileExistsError as exc:
            return JSONResponse({"error": str(exc)}, status_code=409)
        return {"ok": True}

    @app.get("/feedback/aggregate")
    async def feedback_aggregate():
        return engine.feedback_aggregate()

    @app.get("/metrics")
    async def metrics(format: str = "json"):
        if format == "csv":
            return PlainTextResponse(engine.metrics.export_csv(), media_type="text/csv")
        return engine.metrics_export()

    @app.get("/app/{app_id}.json")
    async def app_descriptor(app_id: str):
        descriptor = engine.builder.get(app_id)
        if descriptor is None:
            return JSONResponse({"error": "unknown app"}, status_code=404)
        return descriptor.to_json()

    @app.get("/app/{app_id}")
    async def app_document(app_id: str):
        descriptor = engine.builder.get(app_id)
        if descriptor is None:
            return JSONResponse({"error": "unknown app"}, status_code=404)
        return HTMLResponse(engine.builder.render_document(descriptor))

    @app.get("/svc/{name}")
    async def invoke_service(name: str, request: Request):
        definition = engine.store.lookup_service(name)
        binding = {}
        if definition is not None:
            for p in definition.params:
                values = request.query_params.getlist(p.name)
                if not values:
                    continue
                binding[p.name] = list(values) if p.type == "string-list" else values[-1]
        try:
            result = engine.runtime.invoke(name, binding)
        except UnknownService:
            return JSONResponse({"error": "unknown service"}, status_code=404)
        except ServiceOffline:
            return JSONResponse({"error": "service offline"}, status_code=503)
        except MissingParam as exc:
            return bad_request(str(exc))
        except EmptyResult as exc:
            return JSONResponse({"error": str(exc)}, status_code=404)
        except GoalForgeError as exc:
            return JSONResponse({"error": str(exc)}, status_code=500)
        return {"shape": result.shape, "payload": result.payload}

    if frontend_dir is not None and Path(frontend_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=str(frontend_dir), html=True), name="ui")

    return app
