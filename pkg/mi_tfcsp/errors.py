"""
Exception hierarchy shared by the services, the CLI and the HTTP surface.
"""

from typing import Optional


class MiTfcspError(ValueError):
    """Base class for every data, numerical or configuration failure raised by the toolkit"""


class ContainerFormatError(MiTfcspError):
    """EEGT container with a bad magic, an unknown version or an inconsistent layout"""


class ContainerTruncatedError(ContainerFormatError):
    """EEGT container that ends before the trial it declares"""

    def __init__(self, trial_index: int, message: Optional[str] = None):
        self.trial_index = trial_index
        super().__init__(message or f"container truncated inside trial {trial_index}")


class TrialValidationError(MiTfcspError):
    """A trial that violates the trial set invariants"""

    def __init__(self, trial_index: Optional[int], message: str):
        self.trial_index = trial_index
        prefix = f"trial {trial_index}: " if trial_index is not None else ""
        super().__init__(prefix + message)


class FilterDesignError(MiTfcspError):
    """Invalid band edges or order for a filter design"""


class SignalSizeError(MiTfcspError):
    """Signal too short for the requested analysis window"""


class CoverageError(MiTfcspError):
    """Band grid reaching past the spectrogram's frequency or time coverage"""


class RangeError(MiTfcspError):
    """Crop or epoch window outside the trial extent"""


class DegenerateTrialError(MiTfcspError):
    """Trial with zero energy, for which covariance or features are undefined"""


class ConditioningError(MiTfcspError):
    """Composite covariance still rank deficient after ridge repair"""


class ArgumentError(MiTfcspError):
    """Invalid argument combination (empty inputs, too many features, ...)"""


class TrainingError(MiTfcspError):
    """Classifier training impossible with the given data"""


class DimensionMismatchError(MiTfcspError):
    """Feature, channel or class counts that do not match a trained model"""


class ModelFormatError(MiTfcspError):
    """Serialized pipeline with an unknown format tag or version"""


class PipelineStageError(MiTfcspError):
    """Failure inside a named training stage"""

    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        super().__init__(f"stage '{stage}' failed: {cause}")
