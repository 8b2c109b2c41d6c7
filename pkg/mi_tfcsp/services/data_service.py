"""
Trial set container, EEGT binary persistence and the synthetic motor imagery generator.
"""

import logging
import struct
from pathlib import Path
from typing import Annotated, Any, List, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PlainValidator, model_validator

from mi_tfcsp.errors import ContainerFormatError, ContainerTruncatedError, TrialValidationError
from mi_tfcsp.models import SynthConfig

logger = logging.getLogger(__name__)

MAGIC = b"EEGT"
VERSION = 1
# magic, version, sampling_rate_millihz, class_count, n_channels, n_samples_per_trial, n_trials
HEADER = struct.Struct("<4sIIHHII")
NAME_LENGTH = struct.Struct("<H")
LABEL = struct.Struct("<H")
SAMPLE_DTYPE = np.dtype("<f4")


def _as_samples(value: Any) -> np.ndarray:
    """Trial samples are stored as read-only float32 so the container round trip is exact"""
    samples = np.array(value, dtype=SAMPLE_DTYPE)
    if samples.ndim != 2:
        raise ValueError(f"trial samples must be channels x time, got shape {samples.shape}")
    samples.flags.writeable = False
    return samples


SampleArray = Annotated[np.ndarray, PlainValidator(_as_samples)]


class Trial(BaseModel):
    """One labelled epoch: N channels x T samples in microvolts"""

    model_config = ConfigDict(frozen=True)

    label: int = Field(ge=0, le=65535)
    samples: SampleArray

    @model_validator(mode="after")
    def _check_samples(self):
        n_channels, n_samples = self.samples.shape
        if n_channels < 1 or n_samples < 2:
            raise ValueError(f"trial needs N >= 1 and T >= 2, got {n_channels} x {n_samples}")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("trial contains non-finite samples")
        return self

    @property
    def n_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]


class TrialSet(BaseModel):
    """Labelled collection of fixed-rate multichannel epochs"""

    model_config = ConfigDict(frozen=True)

    sampling_rate: float = Field(gt=0)
    channel_names: List[str]
    trials: List[Trial] = Field(default_factory=list)
    class_count: int = Field(ge=2, le=65535)

    @model_validator(mode="after")
    def _check_trials(self):
        check_trials(self.trials, len(self.channel_names), self.class_count)
        return self

    @property
    def n_channels(self) -> int:
        return len(self.channel_names)

    @property
    def n_samples(self) -> int:
        return self.trials[0].n_samples if self.trials else 0

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.sampling_rate

    @property
    def labels(self) -> np.ndarray:
        return np.array([trial.label for trial in self.trials], dtype=int)

    def by_class(self) -> List[List[Trial]]:
        """Trials grouped by label, in label order"""
        groups: List[List[Trial]] = [[] for _ in range(self.class_count)]
        for trial in self.trials:
            groups[trial.label].append(trial)
        return groups

    def subset(self, labels) -> "TrialSet":
        """Trials whose label is in `labels`, original order kept"""
        wanted = set(int(label) for label in labels)
        return self.with_trials([trial for trial in self.trials if trial.label in wanted])

    def with_trials(self, trials: List[Trial]) -> "TrialSet":
        """Same recording metadata, different trials"""
        return TrialSet(
            sampling_rate=self.sampling_rate,
            channel_names=self.channel_names,
            trials=trials,
            class_count=self.class_count,
        )


def check_trials(trials: List[Trial], n_channels: int, class_count: int):
    """Raise TrialValidationError naming the first trial that breaks the set invariants"""
    n_samples = trials[0].n_samples if trials else None
    for index, trial in enumerate(trials):
        if trial.n_channels != n_channels:
            raise TrialValidationError(index, f"{trial.n_channels} channels, expected {n_channels}")
        if trial.n_samples != n_samples:
            raise TrialValidationError(index, f"{trial.n_samples} samples, expected {n_samples}")
        if trial.label >= class_count:
            raise TrialValidationError(index, f"label {trial.label} outside [0, {class_count})")
        if not np.all(np.isfinite(trial.samples)):
            raise TrialValidationError(index, "non-finite sample")


def save_trialset(trial_set: TrialSet, path: Union[str, Path]):
    """Write the EEGT container"""
    check_trials(trial_set.trials, trial_set.n_channels, trial_set.class_count)

    chunks = [
        HEADER.pack(
            MAGIC,
            VERSION,
            int(round(trial_set.sampling_rate * 1000)),
            trial_set.class_count,
            trial_set.n_channels,
            trial_set.n_samples,
            len(trial_set.trials),
        )
    ]
    for name in trial_set.channel_names:
        encoded = name.encode("utf-8")
        chunks.append(NAME_LENGTH.pack(len(encoded)))
        chunks.append(encoded)
    for trial in trial_set.trials:
        chunks.append(LABEL.pack(trial.label))
        chunks.append(np.ascontiguousarray(trial.samples, dtype=SAMPLE_DTYPE).tobytes())

    Path(path).write_bytes(b"".join(chunks))
    logger.info("Wrote %d trials to %s", len(trial_set.trials), path)


def load_trialset(path: Union[str, Path]) -> TrialSet:
    """Read and validate an EEGT container"""
    data = Path(path).read_bytes()
    if len(data) < HEADER.size:
        raise ContainerFormatError(f"{path}: file shorter than the EEGT header")

    magic, version, rate_millihz, class_count, n_channels, n_samples, n_trials = HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise ContainerFormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise ContainerFormatError(f"{path}: unsupported container version {version}")
    if rate_millihz == 0 or class_count < 2 or n_channels < 1:
        raise ContainerFormatError(f"{path}: invalid header values")
    if n_trials and n_samples < 2:
        raise ContainerFormatError(f"{path}: trials declared with {n_samples} samples")

    offset = HEADER.size
    channel_names = []
    for _ in range(n_channels):
        if offset + NAME_LENGTH.size > len(data):
            raise ContainerFormatError(f"{path}: truncated channel-name block")
        (length,) = NAME_LENGTH.unpack_from(data, offset)
        offset += NAME_LENGTH.size
        if offset + length > len(data):
            raise ContainerFormatError(f"{path}: truncated channel-name block")
        channel_names.append(data[offset : offset + length].decode("utf-8"))
        offset += length

    count = n_channels * n_samples
    payload = count * SAMPLE_DTYPE.itemsize
    trials = []
    for index in range(n_trials):
        if offset + LABEL.size + payload > len(data):
            raise ContainerTruncatedError(index, f"{path}: container truncated inside trial {index}")
        (label,) = LABEL.unpack_from(data, offset)
        offset += LABEL.size
        samples = np.frombuffer(data, dtype=SAMPLE_DTYPE, count=count, offset=offset).reshape(n_channels, n_samples)
        offset += payload
        if label >= class_count:
            raise TrialValidationError(index, f"label {label} outside [0, {class_count})")
        if not np.all(np.isfinite(samples)):
            raise TrialValidationError(index, "non-finite sample")
        trials.append(Trial(label=label, samples=samples))

    if offset != len(data):
        raise ContainerFormatError(f"{path}: {len(data) - offset} trailing bytes after the last trial")

    logger.debug("Loaded %d trials (%d channels, %d samples) from %s", n_trials, n_channels, n_samples, path)
    return TrialSet(
        sampling_rate=rate_millihz / 1000.0,
        channel_names=channel_names,
        trials=trials,
        class_count=class_count,
    )


def generate_synthetic(cfg: SynthConfig) -> TrialSet:
    """
    Deterministic motor imagery surrogate.

    Every trial is unit-variance white noise per channel. On the channels mapped to the trial's class,
    and only inside the (optionally jittered) active window, sinusoids at the rhythm frequencies are
    added with amplitude snr (times the optional rhythm weight) and a random phase per trial and channel.
    Trial i carries label i mod class_count.
    """
    if cfg.snr == 0:
        logger.warning("snr is 0: synthetic classes are indistinguishable, expect chance-level accuracy")
    rng = np.random.default_rng(cfg.seed)
    n_samples = int(round(cfg.trial_duration_s * cfg.sampling_rate))
    t = np.arange(n_samples) / cfg.sampling_rate
    freqs = np.asarray(cfg.rhythm_freqs, dtype=float)
    amplitudes = cfg.snr * np.asarray(cfg.weights(), dtype=float)
    channel_map = cfg.channel_map()
    window_start, window_end = cfg.active_window_s
    width = window_end - window_start

    trials = []
    for index in range(cfg.trials_per_class * cfg.class_count):
        label = index % cfg.class_count
        samples = rng.standard_normal((cfg.channels, n_samples))

        # jitter and phases are always drawn so the noise stream does not depend on snr
        shift = rng.uniform(-cfg.window_jitter_s, cfg.window_jitter_s)
        start = float(np.clip(window_start + shift, 0.0, cfg.trial_duration_s - width))
        active = (t >= start) & (t < start + width)
        channels = channel_map[label]
        phases = rng.uniform(0.0, 2 * np.pi, size=(len(channels), len(freqs)))

        for row, channel in enumerate(channels):
            rhythm = amplitudes[:, None] * np.sin(2 * np.pi * freqs[:, None] * t[active] + phases[row][:, None])
            samples[channel, active] += rhythm.sum(axis=0)

        trials.append(Trial(label=label, samples=samples))

    logger.info(
        "Generated %d synthetic trials (seed=%d, snr=%.3g, %d classes)",
        len(trials),
        cfg.seed,
        cfg.snr,
        cfg.class_count,
    )
    return TrialSet(
        sampling_rate=cfg.sampling_rate,
        channel_names=[f"C{i + 1}" for i in range(cfg.channels)],
        trials=trials,
        class_count=cfg.class_count,
    )
