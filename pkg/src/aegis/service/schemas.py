"""Request/response models for the gateway HTTP API."""

from __future__ import annotations

from typing import Optional, Union

from pydantic import BaseModel, Field


class EventIn(BaseModel):
    ts: int = Field(..., description="milliseconds since epoch")
    entity: str
    reading: Union[float, str]
    source: str = "physical"


class IngestResult(BaseModel):
    accepted: bool
    contexts_emitted: int
    alerts: list["AlertOut"]


class AlertOut(BaseModel):
    id: int
    timestamp: int
    prev_bits: str
    next_bits: str
    reason: str
    probability: Optional[float] = None
    implicated_entities: list[str]
    implicated_apps: list[str]
    status: str
    resolved_by: Optional[str] = None


class FeedbackIn(BaseModel):
    verdict: str  # "malicious" | "benign"
    user: Optional[str] = None


class ModeBody(BaseModel):
    mode: str  # "detection" | "adaptive"


class StatsOut(BaseModel):
    n: int
    observed_states: int
    transitions: int
    trained_snapshots: int
    last_retrain_ms: Optional[float] = None
    events_ingested: int
    events_rejected: int
    pending_alerts: int
    mode: str


class AppUpload(BaseModel):
    name: str
    source: str


class AppInstalled(BaseModel):
    name: str
    logic: list[str]
    context: list[str]
    clauses: int


class NotificationOut(BaseModel):
    seq: int
    alert_id: int
    timestamp: int


class NotificationBatch(BaseModel):
    notifications: list[NotificationOut]
    latest: int


IngestResult.model_rebuild()
