import json
import os
import time

import pytest
from fastapi.testclient import TestClient

from finask.config import AppConfig
from finask.gateway import Gateway, ScriptedProvider
from finask.pipeline import Pipeline
from finask.service import ServiceState, TraceStore, create_app
from finask.vectors import SearchService
from finask.warehouse import Warehouse

from tests.conftest import (
    GOLDEN_QUESTION,
    GOLDEN_ROWS,
    broken_then_fixed_script,
    golden_script,
)

from tests.test_pipeline import probe_script


def make_state(tmp_path, warehouse, search, script, policy, config=None,
               script_file=None) -> ServiceState:
    config = config or AppConfig()
    config.service.trace_dir = str(tmp_path / "traces")
    gateway = Gateway(ScriptedProvider.from_config(script))
    pipeline = Pipeline(warehouse, search, gateway, policy, config.pipeline)
    traces = TraceStore(config.service.trace_dir, config.service.trace_capacity)
    return ServiceState(config, warehouse, search, pipeline, gateway, traces,
                        script_path=script_file)


@pytest.fixture()
def client(tmp_path, test_warehouse, search_service, policy, golden_sql):
    state = make_state(tmp_path, test_warehouse, search_service,
                       golden_script(golden_sql), policy)
    return TestClient(create_app(state), raise_server_exceptions=False)


def test_healthz_ready_when_seeded(client):
    response = client.get("/api/healthz")
    assert response.status_code == 200
    body = response.json()
    assert body["ready"] is True
    assert body["components"] == {"warehouse": True, "index": True, "provider": True}


def test_healthz_not_ready_before_seeding(tmp_path, search_service, policy, golden_sql):
    state = make_state(tmp_path, Warehouse(":memory:"), SearchService(),
                       golden_script(golden_sql), policy)
    client = TestClient(create_app(state), raise_server_exceptions=False)
    response = client.get("/api/healthz")
    assert response.status_code == 503
    body = response.json()
    assert body["ready"] is False
    assert body["components"]["warehouse"] is False


def test_healthz_flips_when_script_unreadable(tmp_path, test_warehouse, search_service,
                                              policy, golden_sql):
    script_file = tmp_path / "script.yaml"
    script_file.write_text("- match: x\n  responses: [y]\n")
    state = make_state(tmp_path, test_warehouse, search_service,
                       golden_script(golden_sql), policy,
                       script_file=str(script_file))
    client = TestClient(create_app(state), raise_server_exceptions=False)
    assert client.get("/api/healthz").json()["components"]["provider"] is True
    script_file.unlink()
    body = client.get("/api/healthz").json()
    assert body["components"]["provider"] is False
    assert body["ready"] is False


def test_ask_golden_question(client):
    response = client.post("/api/ask", json={"question": GOLDEN_QUESTION})
    assert response.status_code == 200
    body = response.json()
    assert body["status"] == "answered"
    assert body["columns"][0] == "stock_code"
    assert tuple(body["rows"][0]) == GOLDEN_ROWS[0]
    assert len(body["rows"]) >= 4
    assert body["trace_id"]
    assert body["elapsed_ms"] > 0


def test_answered_ask_trace_replays(client, test_warehouse):
    body = client.post("/api/ask", json={"question": GOLDEN_QUESTION}).json()
    trace = client.get(f"/api/trace/{body['trace_id']}")
    assert trace.status_code == 200
    doc = trace.json()
    final_attempt = doc["attempts"][-1]
    replayed = test_warehouse.execute_readonly(final_attempt["executed_sql"])
    assert [list(r) for r in replayed.rows] == body["rows"]


def test_trace_unknown_id_404(client):
    assert client.get("/api/trace/deadbeef").status_code == 404


def test_ask_malformed_request_400(client):
    assert client.post("/api/ask", json={}).status_code == 400
    assert client.post("/api/ask", json={"question": ""}).status_code == 400
    body = client.post("/api/ask", json={}).json()
    assert body["error"] == "bad_request"


def test_ask_trace_option_embeds_trace(client):
    body = client.post("/api/ask", json={
        "question": GOLDEN_QUESTION, "options": {"trace": True}}).json()
    assert body["trace"]["question"] == GOLDEN_QUESTION


def test_ask_provider_failure_502_with_trace(tmp_path, test_warehouse, search_service,
                                             policy):
    state = make_state(tmp_path, test_warehouse, search_service,
                       [{"match": "never-ever", "responses": ["x"]}], policy)
    client = TestClient(create_app(state), raise_server_exceptions=False)
    response = client.post("/api/ask", json={"question": "anything"})
    assert response.status_code == 502
    body = response.json()
    assert body["status"] == "failed"
    assert body["trace_id"]
    assert client.get(f"/api/trace/{body['trace_id']}").status_code == 200


def test_ask_multistep_returns_202_and_trace_appears(tmp_path, test_warehouse,
                                                     search_service, policy, golden_sql):
    script = probe_script(golden_sql,
                          ["SELECT DISTINCT quarter FROM financial_ratio LIMIT 10"])
    state = make_state(tmp_path, test_warehouse, search_service, script, policy)
    client = TestClient(create_app(state), raise_server_exceptions=False)
    response = client.post("/api/ask", json={
        "question": GOLDEN_QUESTION, "options": {"multistep": True}})
    assert response.status_code == 202
    trace_id = response.json()["trace_id"]
    assert trace_id
    for _ in range(100):
        got = client.get(f"/api/trace/{trace_id}")
        if got.status_code == 200:
            break
        time.sleep(0.05)
    assert got.status_code == 200
    assert got.json().get("exploration_notes")


def test_schema_endpoint(client):
    body = client.get("/api/schema").json()
    names = {t["name"] for t in body["tables"]}
    assert names == {"company_info", "sub_and_shareholder", "financial_statement",
                     "industry_financial_statement", "financial_ratio",
                     "industry_financial_ratio", "financial_statement_explaination"}
    assert "CDGYoY" in body["ratio_codes"]


def test_eval_endpoint(tmp_path, test_warehouse, search_service, policy, golden_sql):
    batch = tmp_path / "batch.jsonl"
    batch.write_text(json.dumps({
        "question": GOLDEN_QUESTION, "gold_sql": golden_sql,
        "mcqs": [{"stem": "top bank?", "options": ["HDB", "VPB"], "correct_index": 0}],
    }) + "\n")
    script = golden_script(golden_sql) + [{"match": "top bank", "responses": ["A"]}]
    state = make_state(tmp_path, test_warehouse, search_service, script, policy)
    client = TestClient(create_app(state), raise_server_exceptions=False)
    response = client.post("/api/eval", json={"batch_path": str(batch)})
    assert response.status_code == 200
    body = response.json()
    assert body["metric_means"]["ex"] == 1.0
    assert body["mcq_accuracy"] == 1.0


def test_eval_endpoint_missing_file_400(client):
    response = client.post("/api/eval", json={"batch_path": "/nope/missing.jsonl"})
    assert response.status_code == 400


def test_eval_endpoint_empty_batch_400(client, tmp_path):
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    response = client.post("/api/eval", json={"batch_path": str(empty)})
    assert response.status_code == 400
    assert "empty" in json.dumps(response.json())


def test_api_key_enforced(tmp_path, test_warehouse, search_service, policy, golden_sql):
    config = AppConfig()
    config.service.api_key = "sesame"
    state = make_state(tmp_path, test_warehouse, search_service,
                       golden_script(golden_sql), policy, config=config)
    client = TestClient(create_app(state), raise_server_exceptions=False)
    denied = client.post("/api/ask", json={"question": GOLDEN_QUESTION})
    assert denied.status_code == 401
    allowed = client.post("/api/ask", json={"question": GOLDEN_QUESTION},
                          headers={"X-API-Key": "sesame"})
    assert allowed.status_code == 200


def test_trace_store_ring_buffer(tmp_path):
    store = TraceStore(str(tmp_path / "ring"), capacity=5)
    for i in range(8):
        store.put(f"id{i}", {"n": i})
    assert store.get("id0") is None
    assert store.get("id7") == {"n": 7}
    remaining = [store.get(f"id{i}") for i in range(8)]
    assert sum(r is not None for r in remaining) == 5


def test_static_ui_served_when_configured(tmp_path, test_warehouse, search_service,
                                          policy, golden_sql):
    ui = tmp_path / "ui"
    ui.mkdir()
    (ui / "index.html").write_text("<html><body><div id=\"app\"></div></body></html>")
    config = AppConfig()
    config.service.static_dir = str(ui)
    state = make_state(tmp_path, test_warehouse, search_service,
                       golden_script(golden_sql), policy, config=config)
    client = TestClient(create_app(state), raise_server_exceptions=False)
    page = client.get("/")
    assert page.status_code == 200
    assert 'id="app"' in page.text
    # API routes keep precedence over the static mount
    assert client.get("/api/healthz").status_code == 200
