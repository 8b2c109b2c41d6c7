"""
Butterworth bandpass design, zero-phase filtering and the Hamming-window STFT.
"""

import logging
from functools import lru_cache

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import signal

from mi_tfcsp.errors import FilterDesignError, SignalSizeError
from mi_tfcsp.models import FloatArray

logger = logging.getLogger(__name__)

SETTLE_FRACTION = 0.01
SETTLE_HORIZON_S = 10.0


class IirFilter(BaseModel):
    """Cascade of second-order sections, rows (b0, b1, b2, 1, a1, a2)"""

    model_config = ConfigDict(frozen=True)

    sos: FloatArray
    order: int = Field(ge=2)
    low_hz: float
    high_hz: float
    sampling_rate: float = Field(gt=0)
    settle_samples: int = Field(ge=1)

    @model_validator(mode="after")
    def _check_stable(self):
        if self.sos.ndim != 2 or self.sos.shape[1] != 6:
            raise ValueError(f"sections must be K x 6, got {self.sos.shape}")
        if not np.allclose(self.sos[:, 3], 1.0):
            raise ValueError("section denominators must be normalised to a0 = 1")
        if np.max(pole_magnitudes(self.sos)) >= 1.0:
            raise ValueError("unstable section in cascade")
        return self

    @property
    def section_count(self) -> int:
        return self.sos.shape[0]


def pole_magnitudes(sos: np.ndarray) -> np.ndarray:
    """Magnitudes of every pole in the cascade"""
    return np.abs(np.concatenate([np.roots(section[3:]) for section in sos]))


def frequency_response(iir: IirFilter, freqs_hz) -> np.ndarray:
    """Complex response of the cascade evaluated on the unit circle at the given frequencies"""
    z = np.exp(1j * 2 * np.pi * np.asarray(freqs_hz, dtype=float) / iir.sampling_rate)
    zi = 1.0 / z
    response = np.ones_like(z)
    for b0, b1, b2, a0, a1, a2 in iir.sos:
        response *= (b0 + b1 * zi + b2 * zi**2) / (a0 + a1 * zi + a2 * zi**2)
    return response


def _settle_samples(sos: np.ndarray, sampling_rate: float) -> int:
    """Index after which the impulse response stays under 1% of its peak"""
    impulse = np.zeros(int(SETTLE_HORIZON_S * sampling_rate))
    impulse[0] = 1.0
    envelope = np.abs(signal.sosfilt(sos, impulse))
    above = np.nonzero(envelope > SETTLE_FRACTION * envelope.max())[0]
    return int(above[-1]) + 1


def design_butterworth_bandpass(order: int, low_hz: float, high_hz: float, sampling_rate: float) -> IirFilter:
    """
    Digital Butterworth bandpass of total order `order` (prototype order order/2).

    scipy designs the analog prototype, applies the lowpass-to-bandpass transform and discretises with
    the pre-warped bilinear transform, so the -3 dB points land on the band edges.
    """
    if order < 2 or order % 2:
        raise FilterDesignError(f"bandpass order must be even and >= 2, got {order}")
    if not 0 < low_hz < high_hz < sampling_rate / 2:
        raise FilterDesignError(f"band edges must satisfy 0 < {low_hz} < {high_hz} < {sampling_rate / 2}")

    sos = signal.butter(order // 2, [low_hz, high_hz], btype="bandpass", output="sos", fs=sampling_rate)
    iir = IirFilter(
        sos=sos,
        order=order,
        low_hz=low_hz,
        high_hz=high_hz,
        sampling_rate=sampling_rate,
        settle_samples=_settle_samples(sos, sampling_rate),
    )
    logger.debug("Designed order-%d bandpass %.2f-%.2f Hz (%d sections)", order, low_hz, high_hz, iir.section_count)
    return iir


@lru_cache(maxsize=256)
def cached_bandpass(order: int, low_hz: float, high_hz: float, sampling_rate: float) -> IirFilter:
    """Designs are immutable, so repeated per-trial requests share one instance"""
    return design_butterworth_bandpass(order, low_hz, high_hz, sampling_rate)


def filter_signal(iir: IirFilter, x) -> np.ndarray:
    """Zero-phase forward-backward filtering along the last axis with mirrored padding"""
    x = np.asarray(x, dtype=np.float64)
    length = x.shape[-1]
    if length < 2:
        return x.copy()
    padlen = min(3 * iir.settle_samples, length - 1)
    return signal.sosfiltfilt(iir.sos, x, axis=-1, padtype="even", padlen=padlen)


class Spectrogram(BaseModel):
    """Squared STFT magnitudes indexed [..., frequency bin, frame]"""

    model_config = ConfigDict(frozen=True)

    power: FloatArray
    bin_hz: float = Field(gt=0)
    frame_times_s: FloatArray
    window_len: int
    hop: int
    sampling_rate: float = Field(gt=0)

    @property
    def bin_freqs(self) -> np.ndarray:
        return self.bin_hz * np.arange(self.power.shape[-2])

    @property
    def frame_count(self) -> int:
        return self.power.shape[-1]


def stft(x, window_len: int, hop: int, sampling_rate: float) -> Spectrogram:
    """
    Hamming-window STFT of a signal (or of every row of a channels x samples matrix).

    FFT length equals the window length; frame k covers samples [k*hop, k*hop + window_len) and is
    stamped with the time of its centre sample.
    """
    x = np.asarray(x, dtype=np.float64)
    length = x.shape[-1]
    if hop < 1:
        raise SignalSizeError(f"hop must be >= 1, got {hop}")
    if window_len > length:
        raise SignalSizeError(f"window of {window_len} samples longer than signal of {length}")

    window = signal.get_window("hamming", window_len, fftbins=False)
    frames = np.lib.stride_tricks.sliding_window_view(x, window_len, axis=-1)[..., ::hop, :]
    spectrum = np.fft.rfft(frames * window, n=window_len, axis=-1)
    power = np.moveaxis(np.abs(spectrum) ** 2, -1, -2)

    starts = hop * np.arange(frames.shape[-2])
    return Spectrogram(
        power=power,
        bin_hz=sampling_rate / window_len,
        frame_times_s=(starts + (window_len - 1) / 2) / sampling_rate,
        window_len=window_len,
        hop=hop,
        sampling_rate=sampling_rate,
    )
