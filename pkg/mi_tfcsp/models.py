"""
Defines the configuration and report models used across the toolkit.
"""

import base64
from enum import Enum
from typing import Annotated, Any, Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PlainSerializer, PlainValidator, WithJsonSchema, model_validator

ARRAY_DTYPE = "<f8"


def decode_array(value: Any) -> np.ndarray:
    """Accept an ndarray, a nested list or a base64 payload and return a float64 array"""
    if isinstance(value, np.ndarray):
        return value.astype(np.float64, copy=False)
    if isinstance(value, dict):
        if value.get("dtype") != ARRAY_DTYPE:
            raise ValueError(f"unsupported array dtype {value.get('dtype')!r}")
        raw = base64.b64decode(value["data"])
        return np.frombuffer(raw, dtype=ARRAY_DTYPE).reshape(value["shape"]).copy()
    return np.asarray(value, dtype=np.float64)


def encode_array(value: np.ndarray) -> Dict[str, Any]:
    """Little-endian float64 payload, base64 encoded"""
    data = np.ascontiguousarray(value, dtype=ARRAY_DTYPE)
    return {"dtype": ARRAY_DTYPE, "shape": list(data.shape), "data": base64.b64encode(data.tobytes()).decode("ascii")}


FloatArray = Annotated[
    np.ndarray,
    PlainValidator(decode_array),
    PlainSerializer(encode_array, when_used="json"),
    WithJsonSchema(
        {
            "type": "object",
            "properties": {"dtype": {"type": "string"}, "shape": {"type": "array"}, "data": {"type": "string"}},
        }
    ),
]


class Method(str, Enum):
    """Feature extraction method"""

    TFCSP = "tfcsp"
    TDCSP = "tdcsp"
    FBCSP = "fbcsp"


class ClassifierKind(str, Enum):
    """Classifier family; "nvb" is the naive Bayes classifier"""

    LDA = "lda"
    NVB = "nvb"
    SVM = "svm"


class SynthConfig(BaseModel):
    """Shape and signal parameters of the synthetic motor imagery generator"""

    model_config = ConfigDict(frozen=True)

    seed: int = Field(default=7, ge=0, lt=2**64)
    channels: int = Field(default=8, ge=1, le=65535)
    sampling_rate: float = Field(default=250.0, gt=0)
    trial_duration_s: float = Field(default=4.0, gt=0)
    trials_per_class: int = Field(default=40, ge=0)
    class_count: int = Field(default=4, ge=2, le=65535)
    rhythm_freqs: List[float] = Field(default_factory=lambda: [10.0, 20.0], min_length=1)
    rhythm_weights: Optional[List[float]] = Field(default=None, description="Relative amplitude per rhythm")
    snr: float = Field(default=2.0, ge=0, description="Rhythm amplitude relative to unit-variance noise")
    active_window_s: Tuple[float, float] = (1.5, 3.5)
    window_jitter_s: float = Field(default=0.0, ge=0)
    class_channel_map: Optional[List[List[int]]] = None

    @model_validator(mode="after")
    def _check_consistency(self):
        start, end = self.active_window_s
        if not 0 <= start < end <= self.trial_duration_s:
            raise ValueError(f"active window {self.active_window_s} must lie inside [0, {self.trial_duration_s}]")
        nyquist = self.sampling_rate / 2
        if any(f <= 0 or f >= nyquist for f in self.rhythm_freqs):
            raise ValueError(f"rhythm frequencies must lie in (0, {nyquist}) Hz")
        if self.rhythm_weights is not None:
            if len(self.rhythm_weights) != len(self.rhythm_freqs):
                raise ValueError("rhythm_weights must match rhythm_freqs in length")
            if any(w < 0 for w in self.rhythm_weights):
                raise ValueError("rhythm_weights must be non-negative")
        if self.class_channel_map is not None:
            if len(self.class_channel_map) != self.class_count:
                raise ValueError("class_channel_map needs one channel subset per class")
            for subset in self.class_channel_map:
                if not subset or any(ch < 0 or ch >= self.channels for ch in subset):
                    raise ValueError(f"channel subset {subset} outside [0, {self.channels})")
        if round(self.trial_duration_s * self.sampling_rate) < 2:
            raise ValueError("trials need at least 2 samples")
        return self

    def weights(self) -> List[float]:
        """Rhythm amplitudes relative to snr; every rhythm at amplitude snr unless rhythm_weights says otherwise"""
        if self.rhythm_weights is not None:
            return list(self.rhythm_weights)
        return [1.0] * len(self.rhythm_freqs)

    def channel_map(self) -> List[List[int]]:
        """Channels carrying each class's rhythm"""
        if self.class_channel_map is not None:
            return [list(s) for s in self.class_channel_map]
        return [sorted({(2 * c) % self.channels, (2 * c + 1) % self.channels}) for c in range(self.class_count)]


class BandGrid(BaseModel):
    """Frequency x temporal band grid of the band-energy matrix"""

    model_config = ConfigDict(frozen=True)

    freq_band_width: float = Field(default=2.0, gt=0)
    freq_start_step: float = Field(default=1.0, gt=0)
    freq_start_min: float = Field(default=0.0, ge=0)
    freq_start_max: float = Field(default=28.0, ge=0)
    time_band_width: float = Field(default=1.0, gt=0)
    time_start_step: float = Field(default=0.5, gt=0)
    time_start_min: float = Field(default=0.0, ge=0)
    time_start_max: float = Field(default=3.0, ge=0)

    @model_validator(mode="after")
    def _check_steps(self):
        for lo, hi, step, axis in (
            (self.freq_start_min, self.freq_start_max, self.freq_start_step, "frequency"),
            (self.time_start_min, self.time_start_max, self.time_start_step, "time"),
        ):
            if hi < lo:
                raise ValueError(f"{axis} start max below start min")
            count = (hi - lo) / step
            if abs(count - round(count)) > 1e-9:
                raise ValueError(f"{axis} start range is not a whole number of steps")
        return self

    @classmethod
    def for_extent(
        cls,
        freq_top: float = 30.0,
        duration_s: float = 4.0,
        freq_band_width: float = 2.0,
        freq_start_step: float = 1.0,
        time_band_width: float = 1.0,
        time_start_step: float = 0.5,
    ) -> "BandGrid":
        """Grid whose last bands end at freq_top and duration_s"""
        return cls(
            freq_band_width=freq_band_width,
            freq_start_step=freq_start_step,
            freq_start_max=_last_start(freq_top - freq_band_width, freq_start_step),
            time_band_width=time_band_width,
            time_start_step=time_start_step,
            time_start_max=_last_start(duration_s - time_band_width, time_start_step),
        )

    @property
    def freq_count(self) -> int:
        """m, the number of frequency bands"""
        return int(round((self.freq_start_max - self.freq_start_min) / self.freq_start_step)) + 1

    @property
    def time_count(self) -> int:
        """n, the number of temporal bands"""
        return int(round((self.time_start_max - self.time_start_min) / self.time_start_step)) + 1

    @property
    def freq_starts(self) -> np.ndarray:
        return self.freq_start_min + self.freq_start_step * np.arange(self.freq_count)

    @property
    def time_starts(self) -> np.ndarray:
        return self.time_start_min + self.time_start_step * np.arange(self.time_count)


def _last_start(span: float, step: float) -> float:
    if span < 0:
        raise ValueError("band width larger than the grid extent")
    return step * np.floor(span / step + 1e-9)


class FilterSpec(BaseModel):
    """Butterworth bandpass applied to every epoch"""

    model_config = ConfigDict(frozen=True)

    order: int = Field(default=8, ge=2)
    low_hz: float = Field(default=8.0, gt=0)
    high_hz: float = Field(default=30.0, gt=0)

    @model_validator(mode="after")
    def _check(self):
        if self.order % 2:
            raise ValueError("bandpass order must be even")
        if self.low_hz >= self.high_hz:
            raise ValueError("low edge must be below high edge")
        return self


class StftSpec(BaseModel):
    """Hamming-window STFT framing"""

    model_config = ConfigDict(frozen=True)

    window_len: int = Field(default=125, ge=2)
    hop: int = Field(default=62, ge=1)


class EpochWindow(BaseModel):
    """Epoch around the motor imagery cue: pre + task + post seconds"""

    model_config = ConfigDict(frozen=True)

    pre_s: float = Field(default=0.5, ge=0)
    task_s: float = Field(default=3.0, gt=0)
    post_s: float = Field(default=0.5, ge=0)

    @property
    def duration_s(self) -> float:
        return self.pre_s + self.task_s + self.post_s


class ClassifierParams(BaseModel):
    """Classifier hyperparameters"""

    model_config = ConfigDict(frozen=True)

    lda_ridge: float = Field(default=1e-3, ge=0)
    gnb_var_floor: float = Field(default=1e-9, gt=0)
    svm_c: float = Field(default=1.0, gt=0)
    svm_gamma: Optional[float] = Field(default=None, gt=0, description="None selects 1/(d * mean variance)")
    svm_tol: float = Field(default=1e-3, gt=0)
    svm_max_iter: Optional[int] = Field(default=None, ge=1, description="None selects 10 * n")


def default_filter_bank() -> List[Tuple[float, float]]:
    """Nine 4 Hz bands from 4 to 40 Hz"""
    return [(float(lo), float(lo + 4)) for lo in range(4, 40, 4)]


class PipelineConfig(BaseModel):
    """Everything a training run needs besides the data"""

    model_config = ConfigDict(frozen=True)

    classifier: ClassifierKind = ClassifierKind.LDA
    classifier_params: ClassifierParams = Field(default_factory=ClassifierParams)
    epoch: EpochWindow = Field(default_factory=EpochWindow)
    filter: FilterSpec = Field(default_factory=FilterSpec)
    stft: StftSpec = Field(default_factory=StftSpec)
    grid: BandGrid = Field(default_factory=BandGrid)
    selection_channels: Optional[List[int]] = Field(default=None, description="Channels driving band selection")
    n_features: int = Field(default=8, ge=1)
    fbcsp_bands: List[Tuple[float, float]] = Field(default_factory=default_filter_bank)
    fbcsp_selected: int = Field(default=8, ge=1)
    mi_bins: int = Field(default=10, ge=2)

    @model_validator(mode="after")
    def _check_selection_channels(self):
        if self.selection_channels is not None:
            if not self.selection_channels:
                raise ValueError("selection_channels must name at least one channel")
            if any(ch < 0 for ch in self.selection_channels):
                raise ValueError(f"selection_channels {self.selection_channels} must be non-negative")
        return self


class BandSelection(BaseModel):
    """Grid coordinates of the selected time-frequency element"""

    model_config = ConfigDict(frozen=True)

    freq_start: float
    time_start: float
    energy: float = Field(ge=0)


class InspectionResult(BaseModel):
    """Band-energy matrix of one trial with its selected element"""

    trial_index: int
    label: int
    freq_starts: List[float]
    time_starts: List[float]
    energy: List[List[float]]
    selection: BandSelection


class EvalReport(BaseModel):
    """Confusion matrix based evaluation of a trained pipeline"""

    method: str
    classifier: str
    confusion: List[List[int]]
    accuracy: float = Field(ge=0, le=1)
    kappa: float = Field(le=1)
    per_class_recall: List[float]


class MethodTiming(BaseModel):
    """Benchmark timings for one method"""

    name: str
    seconds_median: Optional[float] = None
    seconds_all: List[float] = Field(default_factory=list)
    error: Optional[str] = None


class BenchRatios(BaseModel):
    tfcsp_over_fbcsp: Optional[float] = None
    tfcsp_over_tdcsp: Optional[float] = None


class BenchReport(BaseModel):
    """Relative runtime comparison of the three methods"""

    methods: List[MethodTiming]
    ratios: BenchRatios
    threads: int = 1
    repeats: int
    classifier: str
    percent_faster_than_fbcsp: Optional[float] = None
    percent_slower_than_tdcsp: Optional[float] = None


class StudyRow(BaseModel):
    """Kappa per classifier for one subject"""

    subject: str
    kappa: Dict[str, float]


class StudyReport(BaseModel):
    """Per-subject kappa table with column averages"""

    method: str
    rows: List[StudyRow]
    averages: Dict[str, float]


class RunConfig(BaseModel):
    """Command-line run options"""

    method: Method = Method.TFCSP
    classifier: ClassifierKind = ClassifierKind.LDA
    grid: BandGrid = Field(default_factory=BandGrid)
    filter: FilterSpec = Field(default_factory=FilterSpec)
    n_features: int = Field(default=8, ge=1)
    threads: int = Field(default=1, ge=1, description="Worker threads for evaluate; the benchmark always runs on one")

    def pipeline_config(self) -> PipelineConfig:
        return PipelineConfig(
            classifier=self.classifier, grid=self.grid, filter=self.filter, n_features=self.n_features
        )
