"""Run-time gateway state: live ingestion, alert queue, feedback, retraining.

One ingestion writer folds incoming events through the context engine and
classifies each emitted transition against an immutable model snapshot.
Malicious verdicts open pending alerts and push notification records for
long-polling clients. Benign feedback in adaptive-training mode retrains
the model incrementally and swaps the new model in atomically; alerts and
the validated corpus are appended to disk so a restart resumes cleanly.
"""

from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import dataclass
from enum import Enum
from typing import Optional

from ..apps import AppContextDatabase
from ..core import (
    AegisError,
    ContextArray,
    DeviceEvent,
    HomeDescriptor,
    UnknownEntityError,
    array_from_key,
    validate_event,
)
from ..engine import ContextEngine
from ..markov import (
    DetectorConfig,
    Label,
    TransitionModel,
    Verdict,
    classify,
    implicated_apps,
    retrain_incremental,
)


class FeedbackError(AegisError):
    pass


class UnauthorizedError(AegisError):
    pass


class AlertStatus(str, Enum):
    PENDING = "pending"
    CONFIRMED_MALICIOUS = "confirmed_malicious"
    MARKED_BENIGN = "marked_benign"


class OperationMode(str, Enum):
    DETECTION = "detection"
    ADAPTIVE_TRAINING = "adaptive"


@dataclass
class Alert:
    id: int
    timestamp: int
    prev_bits: str
    next_bits: str
    reason: str
    probability: Optional[float]
    implicated_entities: list[str]
    implicated_apps: list[str]
    status: AlertStatus = AlertStatus.PENDING
    resolved_by: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "timestamp": self.timestamp,
            "prev_bits": self.prev_bits,
            "next_bits": self.next_bits,
            "reason": self.reason,
            "probability": self.probability,
            "implicated_entities": self.implicated_entities,
            "implicated_apps": self.implicated_apps,
            "status": self.status.value,
            "resolved_by": self.resolved_by,
        }


@dataclass
class Notification:
    seq: int
    alert_id: int
    timestamp: int

    def to_dict(self) -> dict:
        return {"seq": self.seq, "alert_id": self.alert_id, "timestamp": self.timestamp}


class AegisRuntime:
    def __init__(
        self,
        home: HomeDescriptor,
        model: TransitionModel,
        apps: AppContextDatabase,
        mode: OperationMode = OperationMode.DETECTION,
        config: Optional[DetectorConfig] = None,
        state_dir: Optional[str] = None,
        tokens: Optional[dict[str, str]] = None,  # bearer token -> user name
        apps_path: Optional[str] = None,
    ):
        if model.n != home.n_bits:
            raise AegisError(
                f"model bit count {model.n} does not match home ({home.n_bits})"
            )
        self.home = home
        self.model = model
        self.apps = apps
        self.mode = mode
        self.config = config or model.config
        self.state_dir = state_dir
        self.tokens = tokens or {}
        self.apps_path = apps_path
        self.engine = ContextEngine(home)
        self._prev = ContextArray((0,) * home.n_bits, 0)
        self.alerts: dict[int, Alert] = {}
        self._next_alert_id = 1
        self.notifications: list[Notification] = []
        self._next_seq = 1
        self._lock = threading.RLock()
        self._notify = threading.Condition(self._lock)
        self.last_retrain_ms: Optional[float] = None
        self.events_ingested = 0
        self.events_rejected = 0
        if state_dir:
            os.makedirs(state_dir, exist_ok=True)
            self._resume()

    # -- persistence ----------------------------------------------------------

    def _append(self, name: str, record: dict) -> None:
        if not self.state_dir:
            return
        with open(os.path.join(self.state_dir, name), "a", encoding="utf-8") as fh:
            fh.write(json.dumps(record))
            fh.write("\n")

    def _resume(self) -> None:
        alerts_path = os.path.join(self.state_dir, "alerts.jsonl")
        if os.path.exists(alerts_path):
            with open(alerts_path, "r", encoding="utf-8") as fh:
                for line in fh:
                    if not line.strip():
                        continue
                    rec = json.loads(line)
                    if rec["op"] == "create":
                        a = rec["alert"]
                        alert = Alert(
                            id=a["id"],
                            timestamp=a["timestamp"],
                            prev_bits=a["prev_bits"],
                            next_bits=a["next_bits"],
                            reason=a["reason"],
                            probability=a.get("probability"),
                            implicated_entities=a.get("implicated_entities", []),
                            implicated_apps=a.get("implicated_apps", []),
                            status=AlertStatus(a.get("status", "pending")),
                        )
                        self.alerts[alert.id] = alert
                        self._next_alert_id = max(self._next_alert_id, alert.id + 1)
                    elif rec["op"] == "resolve":
                        alert = self.alerts.get(rec["id"])
                        if alert:
                            alert.status = AlertStatus(rec["status"])
                            alert.resolved_by = rec.get("user")
        validated_path = os.path.join(self.state_dir, "validated.jsonl")
        if os.path.exists(validated_path):
            model = self.model
            with open(validated_path, "r", encoding="utf-8") as fh:
                for line in fh:
                    if not line.strip():
                        continue
                    rec = json.loads(line)
                    pair = [
                        array_from_key(rec["prev"], rec.get("ts", 0)),
                        array_from_key(rec["next"], rec.get("ts", 0)),
                    ]
                    model = retrain_incremental(model, pair)
            self.model = model

    # -- ingestion ------------------------------------------------------------

    def ingest_event(self, event: DeviceEvent) -> list[Alert]:
        """Run the pipeline on one event; returns any alerts it opened."""
        with self._lock:
            if not self.home.has_entity(event.entity_id):
                self.events_rejected += 1
                raise UnknownEntityError(event.entity_id)
            validate_event(event, self.home)
            arrays = self.engine.ingest(event)
            arrays.extend(self.engine.flush_now())
            self.events_ingested += 1
            created = []
            model = self.model  # immutable snapshot for this batch
            for arr in arrays:
                verdict = classify(
                    model, self.config, self._prev, arr, self.apps, self.home
                )
                if verdict.label is Label.MALICIOUS:
                    created.append(self._open_alert(self._prev, arr, verdict))
                self._prev = arr
            return created

    def _open_alert(self, prev: ContextArray, nxt: ContextArray, verdict: Verdict) -> Alert:
        labels = self.home.bit_labels
        differing = [
            labels[k] for k, (a, b) in enumerate(zip(prev.bits, nxt.bits)) if a != b
        ]
        alert = Alert(
            id=self._next_alert_id,
            timestamp=nxt.timestamp,
            prev_bits=prev.key(),
            next_bits=nxt.key(),
            reason=verdict.reason.value,
            probability=verdict.probability,
            implicated_entities=differing,
            implicated_apps=implicated_apps(self.apps, self.home, prev, nxt),
        )
        self._next_alert_id += 1
        self.alerts[alert.id] = alert
        self._append("alerts.jsonl", {"op": "create", "alert": alert.to_dict()})
        note = Notification(self._next_seq, alert.id, nxt.timestamp)
        self._next_seq += 1
        self.notifications.append(note)
        self._notify.notify_all()
        return alert

    # -- feedback ---------------------------------------------------------------

    def authorize(self, token: Optional[str]) -> str:
        if not self.tokens:
            return "local"
        if token is None or token not in self.tokens:
            raise UnauthorizedError("missing or unknown bearer token")
        return self.tokens[token]

    def submit_feedback(self, alert_id: int, verdict: str, user: str) -> Alert:
        if verdict not in ("malicious", "benign"):
            raise FeedbackError(f"verdict must be 'malicious' or 'benign', got {verdict!r}")
        with self._lock:
            alert = self.alerts.get(alert_id)
            if alert is None:
                raise KeyError(alert_id)
            if alert.status is not AlertStatus.PENDING:
                raise FeedbackError(f"alert {alert_id} is already resolved")
            if verdict == "benign":
                alert.status = AlertStatus.MARKED_BENIGN
                if self.mode is OperationMode.ADAPTIVE_TRAINING:
                    pair = [
                        array_from_key(alert.prev_bits, alert.timestamp),
                        array_from_key(alert.next_bits, alert.timestamp),
                    ]
                    started = time.perf_counter()
                    new_model = retrain_incremental(self.model, pair)
                    self.model = new_model  # atomic swap under the lock
                    self.last_retrain_ms = (time.perf_counter() - started) * 1000.0
                    self._append(
                        "validated.jsonl",
                        {
                            "prev": alert.prev_bits,
                            "next": alert.next_bits,
                            "ts": alert.timestamp,
                        },
                    )
            else:
                alert.status = AlertStatus.CONFIRMED_MALICIOUS
            alert.resolved_by = user
            self._append(
                "alerts.jsonl",
                {
                    "op": "resolve",
                    "id": alert.id,
                    "status": alert.status.value,
                    "user": user,
                },
            )
            return alert

    # -- queries ------------------------------------------------------------------

    def list_alerts(self, status: Optional[str] = None) -> list[Alert]:
        with self._lock:
            alerts = list(self.alerts.values())
        if status in (None, "all"):
            return alerts
        if status == "pending":
            return [a for a in alerts if a.status is AlertStatus.PENDING]
        if status == "resolved":
            return [a for a in alerts if a.status is not AlertStatus.PENDING]
        return [a for a in alerts if a.status.value == status]

    def get_alert(self, alert_id: int) -> Alert:
        with self._lock:
            alert = self.alerts.get(alert_id)
        if alert is None:
            raise KeyError(alert_id)
        return alert

    def model_stats(self) -> dict:
        with self._lock:
            model = self.model
            return {
                "n": model.n,
                "observed_states": len(model.observed_states),
                "transitions": model.transition_count(),
                "trained_snapshots": model.trained_snapshots,
                "last_retrain_ms": self.last_retrain_ms,
                "events_ingested": self.events_ingested,
                "events_rejected": self.events_rejected,
                "pending_alerts": sum(
                    1 for a in self.alerts.values() if a.status is AlertStatus.PENDING
                ),
                "mode": self.mode.value,
            }

    def set_mode(self, mode: OperationMode) -> None:
        with self._lock:
            self.mode = mode

    def install_app(self, name: str, source: str):
        """Extract a submitted app and insert its context into the database."""
        from ..apps import AppSource, Provenance, extract_app, merge_contexts

        pairs = extract_app(AppSource(name, source), self.home)
        context = merge_contexts(pairs)
        with self._lock:
            self.apps.insert(name, context, Provenance.USER_SUBMITTED)
            if self.apps_path:
                self.apps.save(self.apps_path)
        return [(logic, ctx) for logic, ctx in pairs], context

    def poll_notifications(self, since: int, timeout_s: float = 25.0) -> list[Notification]:
        """Long-poll: block until a notification newer than `since` exists."""
        deadline = time.monotonic() + timeout_s
        with self._notify:
            while True:
                fresh = [n for n in self.notifications if n.seq > since]
                if fresh:
                    return fresh
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    return []
                self._notify.wait(remaining)
