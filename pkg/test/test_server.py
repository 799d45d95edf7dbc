import numpy as np
import pytest
from fastapi.testclient import TestClient

from app.server import app
from interface.conformal import CalibrationResult
from interface.error import StaleArtifact
from interface.predictor import FeatureConfig
from service.advisor import StoppingAdvisor, install_advisor
from service.features import fit_norm
from service.gap_predictor import init_model
from utils.string import stable_hash

CONFIG = FeatureConfig(windows=(1, 2, 3))


def _zero_model():
    model = init_model(CONFIG, fit_norm(np.zeros((1, CONFIG.dimension))), [4], seed=0)
    return model.with_parameters([np.zeros_like(p) for p in model.parameters()])


@pytest.fixture
def client():
    model = _zero_model()
    calibration = CalibrationResult(
        kappa=0.8, epsilon=0.01, alpha=0.05, c=1, n=1, scores=[0.8], model_hash=stable_hash(model)
    )
    install_advisor(StoppingAdvisor(model, calibration))
    yield TestClient(app)
    install_advisor(None)


def test_root():
    response = TestClient(app).get("/")
    assert response.status_code == 200


def test_calibration_endpoint(client):
    response = client.get("/stopping/calibration")
    assert response.status_code == 200
    body = response.json()
    assert body["code"] == 200
    assert body["data"]["kappa"] == 0.8
    assert body["data"]["n"] == 1


def test_decide(client):
    samples = [
        {"tick": 0, "upper": 14.0, "lower": 8.0, "nodes_explored": 1, "incumbent_id": 0},
        {"tick": 1, "upper": 10.0, "lower": 9.0, "nodes_explored": 2, "incumbent_id": 1},
    ]
    response = client.post("/stopping/decide", json={"samples": samples})
    assert response.status_code == 200
    data = response.json()["data"]
    # a zero network predicts half the open interval
    assert data["predicted_gap"] == pytest.approx(0.5)
    assert data["rolling_min_gap"] == pytest.approx(0.5)
    assert data["stop"] is True
    assert data["tick"] == 1


def test_decide_keeps_running_above_threshold(client):
    samples = [{"tick": 0, "upper": 14.0, "lower": 8.0, "nodes_explored": 1, "incumbent_id": 0}]
    data = client.post("/stopping/decide", json={"samples": samples}).json()["data"]
    assert data["predicted_gap"] == pytest.approx(3.0)
    assert data["stop"] is False


def test_decide_rejects_unordered_samples(client):
    samples = [{"tick": 3, "upper": 10.0, "lower": 9.0}, {"tick": 1, "upper": 10.0, "lower": 9.0}]
    assert client.post("/stopping/decide", json={"samples": samples}).status_code == 422


def test_decide_requires_theta(client):
    advisor_model = _zero_model()
    keyed = advisor_model.model_copy(
        update={"feature_config": CONFIG.model_copy(update={"theta_keys": ["n_items"]})}
    )
    calibration = CalibrationResult(kappa=0.8, epsilon=0.01, alpha=0.05, c=1, n=1, scores=[0.8])
    install_advisor(StoppingAdvisor(keyed, calibration))
    samples = [{"tick": 0, "upper": 14.0, "lower": 8.0}]
    assert client.post("/stopping/decide", json={"samples": samples}).status_code == 400


def test_report_missing(client):
    assert client.get("/report/summary").status_code == 404


def test_nothing_loaded():
    install_advisor(None)
    assert TestClient(app).get("/stopping/calibration").status_code == 404


def test_advisor_rejects_foreign_calibration():
    calibration = CalibrationResult(kappa=0.8, epsilon=0.01, alpha=0.05, c=1, n=1, scores=[0.8], model_hash="other")
    with pytest.raises(StaleArtifact):
        StoppingAdvisor(_zero_model(), calibration)
