"""
Trained pipeline persistence and the model service behind the HTTP report surface.
"""

import json
import logging
import os
import tempfile
from pathlib import Path
from typing import Optional, Union

from pydantic import ValidationError

from mi_tfcsp.errors import ArgumentError, ModelFormatError
from mi_tfcsp.models import EvalReport, InspectionResult
from mi_tfcsp.services.data_service import load_trialset
from mi_tfcsp.services.pipeline_service import (
    MODEL_FORMAT,
    MODEL_VERSION,
    TrainedPipeline,
    TrainingSummary,
    evaluate,
    inspect_trial,
)

logger = logging.getLogger(__name__)


def save_pipeline(pipeline: TrainedPipeline, path: Union[str, Path]):
    """Write the pipeline as JSON through a temporary file in the target directory"""
    path = Path(path)
    payload = pipeline.model_dump_json(indent=2)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent or ".")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            f.write(payload)
        os.replace(tmp, path)
    except OSError:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    logger.info("Saved %s pipeline to %s", pipeline.method.value, path)


def load_pipeline(path: Union[str, Path]) -> TrainedPipeline:
    """Read a pipeline written by save_pipeline, rejecting unknown formats and versions"""
    text = Path(path).read_text(encoding="utf-8")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ModelFormatError(f"{path} is not JSON: {e}") from e
    if not isinstance(raw, dict) or raw.get("format") != MODEL_FORMAT:
        raise ModelFormatError(f"{path} is not a {MODEL_FORMAT} file")
    if raw.get("version") != MODEL_VERSION:
        raise ModelFormatError(f"unsupported model version {raw.get('version')!r}, expected {MODEL_VERSION}")
    try:
        return TrainedPipeline.model_validate(raw)
    except ValidationError as e:
        raise ModelFormatError(f"{path} holds an invalid model: {e.error_count()} errors") from e


class ModelService:
    """
    Holds one trained pipeline and answers evaluation and inspection requests against it.
    """

    def __init__(self, model_path: Optional[str]):
        self.model_path = model_path
        self._pipeline: Optional[TrainedPipeline] = None

    @property
    def loaded(self) -> bool:
        return self._pipeline is not None

    def initialize(self):
        """Load the model from disk"""
        if not self.model_path:
            logger.warning("No model path configured, serving without a model")
            return
        try:
            logger.info("Loading model from %s...", self.model_path)
            self._pipeline = load_pipeline(self.model_path)
            logger.info("Model loaded: %s/%s", self._pipeline.method.value, self._pipeline.config.classifier.value)
        except Exception as e:
            logger.error("Failed to load model: %s", str(e))
            raise

    @property
    def pipeline(self) -> TrainedPipeline:
        if self._pipeline is None:
            raise ArgumentError("no model loaded")
        return self._pipeline

    def get_summary(self) -> TrainingSummary:
        return self.pipeline.summary

    def evaluate_file(self, test_path: str, threads: int = 1) -> EvalReport:
        """Score the loaded model on an EEGT test file"""
        return evaluate(self.pipeline, load_trialset(test_path), threads=threads)

    def inspect_file(self, path: str, trial_index: int) -> InspectionResult:
        """Band-energy matrix of one trial under the loaded model's configuration"""
        return inspect_trial(load_trialset(path), trial_index, self.pipeline.config)
