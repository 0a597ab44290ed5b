import time

import pytest
from fastapi.testclient import TestClient

from aegis.core import ACTIVE, INACTIVE, Layout
from aegis.markov import train
from aegis.service import AegisRuntime, OperationMode, create_app
from aegis.simulate import (
    benchmark_app_db,
    build_home,
    daily_scripts,
    simulate_benign,
    trace_contexts,
)
from conftest import SMART_LIGHT_APP


@pytest.fixture(scope="module")
def trained():
    home = build_home(Layout.SINGLE_BEDROOM, 1)
    benign = simulate_benign(home, daily_scripts(home, 1), 3, seed=5)
    arrays, _ = trace_contexts(home, benign)
    model = train(arrays)
    return home, model, benign.events[-1].timestamp


def make_runtime(trained, mode=OperationMode.ADAPTIVE_TRAINING, **kw):
    home, model, _ = trained
    return AegisRuntime(home, model, benchmark_app_db(home), mode=mode, **kw)


@pytest.fixture
def client(trained):
    return TestClient(create_app(make_runtime(trained))), trained[2]


def _post_event(client, ts, entity, reading, source="physical"):
    return client.post(
        "/events", json={"ts": ts, "entity": entity, "reading": reading, "source": source}
    )


# -- ingestion -----------------------------------------------------------------


def test_known_benign_event_raises_no_alert(client):
    c, t0 = client
    r = _post_event(c, t0 + 1000, "PH1", ACTIVE)
    assert r.status_code == 200
    assert r.json()["alerts"] == []
    assert c.get("/alerts", params={"status": "pending"}).json() == []


def test_forged_fire_event_alerts_on_alarm_entity(client):
    c, t0 = client
    _post_event(c, t0 + 1000, "PH1", ACTIVE)
    r1 = _post_event(c, t0 + 5000, "SS1", ACTIVE)
    r2 = _post_event(c, t0 + 5000, "FA1", ACTIVE)
    alerts = r1.json()["alerts"] + r2.json()["alerts"]
    assert alerts, "forged smoke/alarm events must raise an alert"
    implicated = [ent for a in alerts for ent in a["implicated_entities"]]
    assert "FA1" in implicated or "SS1" in implicated
    assert any("FA1" in a["implicated_entities"] for a in r2.json()["alerts"])


def test_duplicate_state_event_emits_nothing(client):
    c, t0 = client
    _post_event(c, t0 + 1000, "PH1", ACTIVE)
    r = _post_event(c, t0 + 2000, "PH1", ACTIVE)  # same location bit
    assert r.json()["contexts_emitted"] == 0
    assert r.json()["alerts"] == []


def test_unknown_entity_rejected_and_counted(client):
    c, t0 = client
    r = _post_event(c, t0 + 1000, "GHOST", ACTIVE)
    assert r.status_code == 400
    assert c.get("/model/stats").json()["events_rejected"] == 1


def test_out_of_order_rejected(client):
    c, t0 = client
    _post_event(c, t0 + 5000, "PH1", ACTIVE)
    r = _post_event(c, t0 + 1000, "PH1", INACTIVE)
    assert r.status_code == 400


def test_alert_ids_dense_and_one_per_verdict(client):
    c, t0 = client
    _post_event(c, t0 + 1000, "PH1", ACTIVE)
    _post_event(c, t0 + 5000, "LK1", ACTIVE)   # lone unlock: alert 1
    _post_event(c, t0 + 9000, "SS1", ACTIVE)   # smoke alone: alert 2
    ids = [a["id"] for a in c.get("/alerts", params={"status": "all"}).json()]
    assert ids == [1, 2]


# -- feedback ----------------------------------------------------------------------


def test_mark_benign_retrains_and_replay_stays_quiet(client):
    c, t0 = client
    _post_event(c, t0 + 1000, "PH1", ACTIVE)
    r = _post_event(c, t0 + 5000, "LK1", ACTIVE)
    alert = r.json()["alerts"][0]
    before = c.get("/model/stats").json()["trained_snapshots"]
    fb = c.post(f"/alerts/{alert['id']}/feedback", json={"verdict": "benign"})
    assert fb.status_code == 200
    assert fb.json()["status"] == "marked_benign"
    stats = c.get("/model/stats").json()
    assert stats["trained_snapshots"] == before + 2
    assert stats["last_retrain_ms"] is not None and stats["last_retrain_ms"] > 0
    # replaying the same transition no longer alerts
    _post_event(c, t0 + 9000, "LK1", INACTIVE)
    r = _post_event(c, t0 + 12000, "LK1", ACTIVE)
    assert r.json()["alerts"] == []


def test_confirm_malicious_closes_without_retraining(client):
    c, t0 = client
    _post_event(c, t0 + 1000, "PH1", ACTIVE)
    r = _post_event(c, t0 + 5000, "LK1", ACTIVE)
    alert = r.json()["alerts"][0]
    before = c.get("/model/stats").json()["trained_snapshots"]
    fb = c.post(f"/alerts/{alert['id']}/feedback", json={"verdict": "malicious"})
    assert fb.json()["status"] == "confirmed_malicious"
    assert c.get("/model/stats").json()["trained_snapshots"] == before


def test_second_feedback_conflicts(client):
    c, t0 = client
    _post_event(c, t0 + 1000, "PH1", ACTIVE)
    r = _post_event(c, t0 + 5000, "LK1", ACTIVE)
    alert_id = r.json()["alerts"][0]["id"]
    c.post(f"/alerts/{alert_id}/feedback", json={"verdict": "benign"})
    again = c.post(f"/alerts/{alert_id}/feedback", json={"verdict": "malicious"})
    assert again.status_code == 409


def test_unknown_alert_404(client):
    c, _ = client
    assert c.post("/alerts/999/feedback", json={"verdict": "benign"}).status_code == 404
    assert c.get("/alerts/999").status_code == 404


def test_detection_mode_feedback_never_mutates_model(trained):
    c = TestClient(create_app(make_runtime(trained, mode=OperationMode.DETECTION)))
    t0 = trained[2]
    _post_event(c, t0 + 1000, "PH1", ACTIVE)
    r = _post_event(c, t0 + 5000, "LK1", ACTIVE)
    alert_id = r.json()["alerts"][0]["id"]
    before = c.get("/model/stats").json()["trained_snapshots"]
    fb = c.post(f"/alerts/{alert_id}/feedback", json={"verdict": "benign"})
    assert fb.json()["status"] == "marked_benign"
    assert c.get("/model/stats").json()["trained_snapshots"] == before


def test_bearer_tokens_enforced(trained):
    rt = make_runtime(trained, tokens={"s3cret": "alice"})
    c = TestClient(create_app(rt))
    t0 = trained[2]
    _post_event(c, t0 + 1000, "PH1", ACTIVE)
    r = _post_event(c, t0 + 5000, "LK1", ACTIVE)
    alert_id = r.json()["alerts"][0]["id"]
    denied = c.post(f"/alerts/{alert_id}/feedback", json={"verdict": "benign"})
    assert denied.status_code == 401
    ok = c.post(
        f"/alerts/{alert_id}/feedback",
        json={"verdict": "benign"},
        headers={"Authorization": "Bearer s3cret"},
    )
    assert ok.status_code == 200
    assert ok.json()["resolved_by"] == "alice"


# -- stats, mode, notifications, apps -------------------------------------------------


def test_stats_fields(client):
    c, _ = client
    stats = c.get("/model/stats").json()
    assert stats["n"] == 10  # 8 entities + 2 controller bits
    assert stats["observed_states"] > 0
    assert stats["transitions"] > 0
    assert stats["mode"] == "adaptive"


def test_mode_roundtrip(client):
    c, _ = client
    assert c.get("/mode").json() == {"mode": "adaptive"}
    assert c.put("/mode", json={"mode": "detection"}).json() == {"mode": "detection"}
    assert c.get("/mode").json() == {"mode": "detection"}
    assert c.put("/mode", json={"mode": "bogus"}).status_code == 422


def test_notifications_since_and_timeout(client):
    c, t0 = client
    r = c.get("/notifications", params={"since": 0, "timeout_ms": 50})
    assert r.json()["notifications"] == []
    _post_event(c, t0 + 1000, "PH1", ACTIVE)
    _post_event(c, t0 + 5000, "LK1", ACTIVE)
    r = c.get("/notifications", params={"since": 0, "timeout_ms": 50}).json()
    assert len(r["notifications"]) == 1
    seq = r["latest"]
    r = c.get("/notifications", params={"since": seq, "timeout_ms": 50}).json()
    assert r["notifications"] == []


def test_app_upload_extracts_and_installs(trained):
    home, model, t0 = trained
    rt = make_runtime(trained)
    c = TestClient(create_app(rt))
    # the sample app's devices do not resolve in this home
    r = c.post("/apps", json={"name": "sample", "source": SMART_LIGHT_APP})
    assert r.status_code == 422
    src = SMART_LIGHT_APP.replace("contact1", "BD1").replace("light1", "BL1")
    r = c.post("/apps", json={"name": "door-light", "source": src})
    assert r.status_code == 200
    body = r.json()
    assert body["clauses"] == 2
    assert "Trigger:" in body["logic"][0]
    assert "door-light" in rt.apps


def test_state_dir_resume(trained, tmp_path):
    home, model, t0 = trained
    state = str(tmp_path / "state")
    rt = AegisRuntime(
        home, model, benchmark_app_db(home),
        mode=OperationMode.ADAPTIVE_TRAINING, state_dir=state,
    )
    c = TestClient(create_app(rt))
    _post_event(c, t0 + 1000, "PH1", ACTIVE)
    r = _post_event(c, t0 + 5000, "LK1", ACTIVE)
    a1 = r.json()["alerts"][0]["id"]
    c.post(f"/alerts/{a1}/feedback", json={"verdict": "benign"})
    r = _post_event(c, t0 + 9000, "SS1", ACTIVE)
    a2 = r.json()["alerts"][0]["id"]  # left pending
    # a fresh runtime resumes alerts and the validated corpus
    rt2 = AegisRuntime(
        home, model, benchmark_app_db(home),
        mode=OperationMode.ADAPTIVE_TRAINING, state_dir=state,
    )
    assert rt2.get_alert(a1).status.value == "marked_benign"
    assert rt2.get_alert(a2).status.value == "pending"
    assert rt2.model.trained_snapshots == model.trained_snapshots + 2


def test_retrain_swaps_consistent_model(client):
    c, t0 = client
    _post_event(c, t0 + 1000, "PH1", ACTIVE)
    r = _post_event(c, t0 + 5000, "LK1", ACTIVE)
    alert_id = r.json()["alerts"][0]["id"]
    c.post(f"/alerts/{alert_id}/feedback", json={"verdict": "benign"})
    # row sums remain exact after the swap
    runtime = c.app.state.runtime
    model = runtime.model
    for i, row in model.counts.items():
        assert sum(row.values()) == model.total_from(i)
