"""
Report API over a trained model: offline evaluation and band-energy inspection of stored EEGT files
"""

import logging
import os
from contextlib import asynccontextmanager

from dotenv import load_dotenv
from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from mi_tfcsp.errors import MiTfcspError
from mi_tfcsp.models import EvalReport, InspectionResult
from mi_tfcsp.services.model_service import ModelService
from mi_tfcsp.services.pipeline_service import TrainingSummary

load_dotenv()

logging.basicConfig(level=os.getenv("MI_TFCSP_LOG_LEVEL", "DEBUG").upper())
logger = logging.getLogger(__name__)

model_service = ModelService(model_path=os.getenv("MI_TFCSP_MODEL"))


class EvaluateRequest(BaseModel):
    """Request model for scoring the loaded model on a test file"""

    test_path: str = Field(..., description="EEGT file with labelled test trials")
    threads: int = Field(default=1, ge=1, le=64, description="Worker threads for prediction")


class InspectRequest(BaseModel):
    """Request model for the band-energy matrix of one trial"""

    path: str = Field(..., description="EEGT file")
    trial_index: int = Field(default=0, ge=0)


@asynccontextmanager
async def lifespan(app_context: FastAPI):  # pylint: disable=unused-argument
    """Load the model once at start-up"""
    model_service.model_path = os.getenv("MI_TFCSP_MODEL", model_service.model_path)
    model_service.initialize()
    yield


app = FastAPI(
    title="MI-TFCSP API",
    description="Offline evaluation and time-frequency inspection for motor imagery EEG models",
    version="1.0.0",
    lifespan=lifespan,
)


def _http_error(action: str, e: Exception) -> HTTPException:
    logger.error("Error %s: %s", action, str(e))
    status = 400 if isinstance(e, (MiTfcspError, OSError)) else 500
    return HTTPException(status_code=status, detail=str(e))


@app.get("/health")
async def health_check():
    """Health check endpoint"""
    return {"status": "healthy", "model_loaded": model_service.loaded}


@app.get("/model", response_model=TrainingSummary)
async def get_model():
    """Training summary of the loaded model"""
    try:
        return model_service.get_summary()
    except Exception as e:
        raise _http_error("reading model summary", e) from e


@app.post("/evaluate", response_model=EvalReport)
def evaluate_file(request: EvaluateRequest):
    """Score the loaded model on a stored test file"""
    try:
        return model_service.evaluate_file(request.test_path, threads=request.threads)
    except Exception as e:
        raise _http_error("evaluating model", e) from e


@app.post("/inspect", response_model=InspectionResult)
def inspect_file(request: InspectRequest):
    """Band-energy matrix and selected element of one stored trial"""
    try:
        return model_service.inspect_file(request.path, request.trial_index)
    except Exception as e:
        raise _http_error("inspecting trial", e) from e
