"""HTTP service: prediction endpoint, health, and load shedding."""

import pytest
from fastapi.testclient import TestClient

from icaflow.clients import OracleEchoClient
from icaflow.kb import load_kb
from icaflow.service import create_app


@pytest.fixture(scope="module")
def app(golden_kb_dir):
    kb = load_kb(golden_kb_dir)
    return create_app(kb, OracleEchoClient(), max_in_flight=2)


@pytest.fixture()
def client(app):
    return TestClient(app)


def test_healthz(client):
    response = client.get("/healthz")
    assert response.status_code == 200
    body = response.json()
    assert body["status"] == "ok"
    assert body["workflows"] == 7


def test_predict_ok(client):
    response = client.post(
        "/v1/predict",
        json={
            "query": "guest cancellation request",
            "context": {
                "reservation_status_is_still_active": True,
                "check_in_is_more_than_48_hours_away": False,
            },
        },
    )
    assert response.status_code == 200
    body = response.json()
    assert body["status"] == "ok"
    assert body["workflow_id"] == "workflow_01_cancellation"
    assert body["action_id"] == 2
    assert "late cancellation fee" in body["action_content"]


def test_predict_no_intent_match(client):
    response = client.post("/v1/predict", json={"query": "zzz qqq gibberish"})
    assert response.status_code == 200
    assert response.json()["status"] == "no_intent_match"


def test_empty_query_rejected(client):
    response = client.post("/v1/predict", json={"query": "   "})
    assert response.status_code == 422


def test_missing_query_is_a_validation_error(client):
    response = client.post("/v1/predict", json={})
    assert response.status_code == 422


def test_load_shedding_when_saturated(app, client):
    limiter = app.state.limiter
    assert limiter.acquire(blocking=False)
    assert limiter.acquire(blocking=False)
    try:
        response = client.post("/v1/predict", json={"query": "guest cancellation request"})
        assert response.status_code == 429
        assert response.json()["status"] == "retry_later"
    finally:
        limiter.release()
        limiter.release()
    # capacity restored
    response = client.post("/v1/predict", json={"query": "guest cancellation request"})
    assert response.status_code == 200
