"""FastAPI wiring for the gateway runtime."""

from __future__ import annotations

import logging
import os
from typing import Optional

from fastapi import FastAPI, Header, HTTPException, Query
from fastapi.staticfiles import StaticFiles

from ..apps import AegisError as AppError
from ..core import (
    AegisError,
    DeviceEvent,
    EventSource,
    OutOfOrderEventError,
    ReadingVariantError,
    UnknownEntityError,
)
from ..apps import format_app_context, format_logic
from .runtime import AegisRuntime, Alert, FeedbackError, OperationMode, UnauthorizedError
from .schemas import (
    AlertOut,
    AppInstalled,
    AppUpload,
    EventIn,
    FeedbackIn,
    IngestResult,
    ModeBody,
    NotificationBatch,
    NotificationOut,
    StatsOut,
)

logger = logging.getLogger("aegis.service")

_MODE_NAMES = {
    "detection": OperationMode.DETECTION,
    "adaptive": OperationMode.ADAPTIVE_TRAINING,
}


def _alert_out(alert: Alert) -> AlertOut:
    return AlertOut(**alert.to_dict())


def _bearer(authorization: Optional[str]) -> Optional[str]:
    if authorization and authorization.lower().startswith("bearer "):
        return authorization[7:].strip()
    return None


def create_app(runtime: AegisRuntime, console_dir: Optional[str] = None) -> FastAPI:
    app = FastAPI(title="aegis gateway", version="0.1.0")
    app.state.runtime = runtime

    @app.post("/events", response_model=IngestResult)
    def post_event(body: EventIn):
        try:
            source = EventSource(body.source)
        except ValueError:
            raise HTTPException(422, f"unknown source {body.source!r}")
        event = DeviceEvent(body.ts, body.entity, body.reading, source)
        before = len(runtime.engine.emitted_spans)
        try:
            alerts = runtime.ingest_event(event)
        except UnknownEntityError as err:
            logger.warning("rejected event: %s", err)
            raise HTTPException(400, str(err))
        except (ReadingVariantError, OutOfOrderEventError) as err:
            logger.warning("rejected event: %s", err)
            raise HTTPException(400, str(err))
        emitted = len(runtime.engine.emitted_spans) - before
        return IngestResult(
            accepted=True,
            contexts_emitted=emitted,
            alerts=[_alert_out(a) for a in alerts],
        )

    @app.get("/alerts", response_model=list[AlertOut])
    def list_alerts(status: Optional[str] = Query(default="pending")):
        return [_alert_out(a) for a in runtime.list_alerts(status)]

    @app.get("/alerts/{alert_id}", response_model=AlertOut)
    def get_alert(alert_id: int):
        try:
            return _alert_out(runtime.get_alert(alert_id))
        except KeyError:
            raise HTTPException(404, f"unknown alert {alert_id}")

    @app.post("/alerts/{alert_id}/feedback", response_model=AlertOut)
    def feedback(
        alert_id: int,
        body: FeedbackIn,
        authorization: Optional[str] = Header(default=None),
    ):
        try:
            user = runtime.authorize(_bearer(authorization))
        except UnauthorizedError as err:
            raise HTTPException(401, str(err))
        if body.user and not runtime.tokens:
            user = body.user
        try:
            alert = runtime.submit_feedback(alert_id, body.verdict, user)
        except KeyError:
            raise HTTPException(404, f"unknown alert {alert_id}")
        except FeedbackError as err:
            status = 409 if "already resolved" in str(err) else 422
            raise HTTPException(status, str(err))
        return _alert_out(alert)

    @app.get("/model/stats", response_model=StatsOut)
    def model_stats():
        return StatsOut(**runtime.model_stats())

    @app.get("/mode")
    def get_mode():
        return {"mode": runtime.mode.value}

    @app.put("/mode")
    def put_mode(body: ModeBody):
        mode = _MODE_NAMES.get(body.mode) or _MODE_NAMES.get(
            body.mode.replace("adaptive_training", "adaptive")
        )
        if mode is None:
            raise HTTPException(422, f"unknown mode {body.mode!r}")
        runtime.set_mode(mode)
        return {"mode": runtime.mode.value}

    @app.post("/apps", response_model=AppInstalled)
    def upload_app(body: AppUpload):
        try:
            pairs, context = runtime.install_app(body.name, body.source)
        except AppError as err:
            raise HTTPException(422, str(err))
        return AppInstalled(
            name=body.name,
            logic=[format_logic(logic) for logic, _ in pairs],
            context=[format_app_context(ctx) for _, ctx in pairs],
            clauses=len(context.clauses),
        )

    @app.get("/notifications", response_model=NotificationBatch)
    def notifications(
        since: int = Query(default=0),
        timeout_ms: int = Query(default=25000, ge=0, le=60000),
    ):
        notes = runtime.poll_notifications(since, timeout_s=timeout_ms / 1000.0)
        latest = max((n.seq for n in notes), default=since)
        return NotificationBatch(
            notifications=[NotificationOut(**n.to_dict()) for n in notes],
            latest=latest,
        )

    if console_dir and os.path.isdir(console_dir):
        app.mount("/console", StaticFiles(directory=console_dir, html=True), name="console")

    return app
