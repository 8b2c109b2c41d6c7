"""
Tests for FastAPI endpoints
"""

# pylint: disable=redefined-outer-name,unused-argument

from unittest.mock import patch

import pytest  # pylint: disable=import-error
from fastapi.testclient import TestClient

from mi_tfcsp.errors import ArgumentError, DimensionMismatchError
from mi_tfcsp.main import app
from mi_tfcsp.models import BandSelection, ClassifierKind, EvalReport, InspectionResult, Method
from mi_tfcsp.services.pipeline_service import TrainingSummary

client = TestClient(app)


@pytest.fixture(autouse=True)
def mock_model_service():
    """Mock ModelService methods"""
    with patch("mi_tfcsp.main.model_service") as mock:
        mock.loaded = True
        mock.get_summary.return_value = TrainingSummary(
            method=Method.TFCSP,
            classifier=ClassifierKind.LDA,
            feature_count=8,
            bands=[(9.0, 11.0)],
            subject_freq_start=9.0,
            csp_fits=1,
            stage_seconds={"csp": 0.01},
        )
        mock.evaluate_file.return_value = EvalReport(
            method="tfcsp",
            classifier="lda",
            confusion=[[9, 1], [2, 8]],
            accuracy=0.85,
            kappa=0.7,
            per_class_recall=[0.9, 0.8],
        )
        mock.inspect_file.return_value = InspectionResult(
            trial_index=3,
            label=1,
            freq_starts=[0.0, 1.0],
            time_starts=[0.0, 0.5],
            energy=[[1.0, 2.0], [3.0, 0.5]],
            selection=BandSelection(freq_start=1.0, time_start=0.0, energy=3.0),
        )
        yield mock


def test_health_check(mock_model_service):
    """Test health check endpoint"""
    response = client.get("/health")
    assert response.status_code == 200
    assert response.json() == {"status": "healthy", "model_loaded": True}


def test_get_model(mock_model_service):
    """Test reading the training summary"""
    response = client.get("/model")
    assert response.status_code == 200
    data = response.json()
    assert data["method"] == "tfcsp"
    assert data["subject_freq_start"] == 9.0
    assert data["bands"] == [[9.0, 11.0]]


def test_get_model_without_model(mock_model_service):
    """Test that a missing model is a client error"""
    mock_model_service.get_summary.side_effect = ArgumentError("no model loaded")
    response = client.get("/model")
    assert response.status_code == 400
    assert response.json()["detail"] == "no model loaded"


def test_evaluate(mock_model_service):
    """Test scoring a stored test file"""
    response = client.post("/evaluate", json={"test_path": "/data/test.eegt", "threads": 2})
    assert response.status_code == 200
    assert response.json()["kappa"] == 0.7
    mock_model_service.evaluate_file.assert_called_once_with("/data/test.eegt", threads=2)


def test_evaluate_validates_threads(mock_model_service):
    """Test request validation on the thread count"""
    response = client.post("/evaluate", json={"test_path": "/data/test.eegt", "threads": 0})
    assert response.status_code == 422
    mock_model_service.evaluate_file.assert_not_called()


def test_evaluate_data_error(mock_model_service):
    """Test that data errors map to 400"""
    mock_model_service.evaluate_file.side_effect = DimensionMismatchError("test set has 6 channels, model expects 8")
    response = client.post("/evaluate", json={"test_path": "/data/six.eegt"})
    assert response.status_code == 400
    assert "6 channels" in response.json()["detail"]


def test_evaluate_missing_file(mock_model_service):
    mock_model_service.evaluate_file.side_effect = FileNotFoundError("no such file: /data/absent.eegt")
    response = client.post("/evaluate", json={"test_path": "/data/absent.eegt"})
    assert response.status_code == 400


def test_evaluate_unexpected_error(mock_model_service):
    """Test that anything else maps to 500"""
    mock_model_service.evaluate_file.side_effect = RuntimeError("worker died")
    response = client.post("/evaluate", json={"test_path": "/data/test.eegt"})
    assert response.status_code == 500
    assert "worker died" in response.json()["detail"]


def test_inspect(mock_model_service):
    """Test the band-energy matrix of one trial"""
    response = client.post("/inspect", json={"path": "/data/train.eegt", "trial_index": 3})
    assert response.status_code == 200
    data = response.json()
    assert data["energy"] == [[1.0, 2.0], [3.0, 0.5]]
    assert data["selection"]["freq_start"] == 1.0
    mock_model_service.inspect_file.assert_called_once_with("/data/train.eegt", 3)


def test_inspect_rejects_negative_index(mock_model_service):
    response = client.post("/inspect", json={"path": "/data/train.eegt", "trial_index": -1})
    assert response.status_code == 422


def test_lifespan_loads_model(monkeypatch, mock_model_service):
    """Test that start-up reads the model path from the environment and loads it"""
    monkeypatch.setenv("MI_TFCSP_MODEL", "/models/tfcsp.json")
    with TestClient(app):
        pass
    assert mock_model_service.model_path == "/models/tfcsp.json"
    mock_model_service.initialize.assert_called_once()
