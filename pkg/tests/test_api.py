# tests/test_api.py
import pytest
from fastapi.testclient import TestClient

from app.main import app

PROFILES = [
    {"device_id": 0, "mu": 8.0, "beta": 0.0, "forward_time": 4.0},
    {"device_id": 1, "mu": 5.0, "beta": 0.0},
    {"device_id": 2, "mu": 2.5, "beta": 0.0},
]

SMALL_EXPERIMENT = {
    "seed": 3,
    "rounds": 2,
    "model": {"num_layers": 4, "dim": 8},
    "planner": {"rank_budget": 12},
    "data": {"train_samples": 120, "test_samples": 40},
    "devices": {"count": 4, "modes": [1.0], "noise": 0.0, "bandwidth_lo": 10.0, "bandwidth_hi": 10.0},
}


@pytest.fixture
def client() -> TestClient:
    return TestClient(app)


def test_health_check(client):
    response = client.get("/api/v1/health-check")
    assert response.status_code == 200
    assert response.json()["status"] == "ok"


def test_plan_endpoint(client):
    response = client.post("/api/v1/plans/", json={"profiles": PROFILES, "params": {"num_layers": 12, "rank_budget": 96}})
    assert response.status_code == 200
    body = response.json()
    assert {row["device_id"]: row["depth"] for row in body["rows"]} == {0: 3, 1: 9, 2: 12}
    assert body["depth_gap"] == 9
    assert body["rank_distribution"] == list(range(2, 14))


def test_infeasible_plan_is_unprocessable(client):
    response = client.post("/api/v1/plans/", json={"profiles": PROFILES, "params": {"num_layers": 12, "rank_budget": 66}})
    assert response.status_code == 422
    assert "78" in response.json()["detail"]


def test_presets(client):
    response = client.get("/api/v1/experiments/presets")
    assert response.status_code == 200
    assert set(response.json()) == {"convergence", "hetero10", "homogeneous"}


def test_run_experiment(client):
    response = client.post("/api/v1/experiments/", json=SMALL_EXPERIMENT)
    assert response.status_code == 200
    summary = response.json()
    assert summary["planner"] == "legend"
    assert summary["rounds"] == 2
    assert summary["cumulative_bytes"] > 0


def test_invalid_experiment(client):
    response = client.post("/api/v1/experiments/", json={"planner": {"rank_step": -1}})
    assert response.status_code == 422


def test_download(client):
    response = client.post("/api/v1/download/", json=SMALL_EXPERIMENT)
    assert response.status_code == 200
    assert response.headers["content-type"].startswith(
        "application/vnd.openxmlformats-officedocument.spreadsheetml.sheet"
    )
    assert response.content[:2] == b"PK"
