"""
Frequency x temporal band-energy matrix and optimal element selection.
"""

import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from mi_tfcsp.errors import ArgumentError, CoverageError, RangeError
from mi_tfcsp.models import BandGrid, BandSelection, FloatArray
from mi_tfcsp.services.data_service import Trial
from mi_tfcsp.services.dsp_service import Spectrogram, cached_bandpass, filter_signal

logger = logging.getLogger(__name__)

CROP_FILTER_ORDER = 8
MIN_LOW_EDGE_HZ = 0.5


class BandEnergyMatrix(BaseModel):
    """m x n mean band power, rows = frequency starts, columns = temporal starts"""

    model_config = ConfigDict(frozen=True)

    values: FloatArray
    grid: BandGrid

    @model_validator(mode="after")
    def _check_shape(self):
        expected = (self.grid.freq_count, self.grid.time_count)
        if self.values.shape != expected:
            raise ValueError(f"matrix shape {self.values.shape} does not match grid {expected}")
        if not np.all(np.isfinite(self.values)) or np.any(self.values < 0):
            raise ValueError("band energies must be finite and non-negative")
        return self


def _band_masks(centres: np.ndarray, starts: np.ndarray, width: float, axis: str) -> np.ndarray:
    masks = (centres[None, :] >= starts[:, None]) & (centres[None, :] < starts[:, None] + width)
    empty = np.nonzero(~masks.any(axis=1))[0]
    if empty.size:
        band = starts[empty[0]]
        raise CoverageError(f"{axis} band [{band:g}, {band + width:g}) holds no spectrogram {axis} points")
    return masks


def band_energy_matrix(
    spectrogram: Spectrogram, grid: BandGrid, channels: Optional[Sequence[int]] = None
) -> BandEnergyMatrix:
    """
    Mean squared magnitude over every (frequency band, temporal band) rectangle.

    A spectrogram with a leading channel axis is averaged over `channels` (all channels by default).
    Bins belong to a band when their centre frequency lies in [f, f + width); frames when their centre
    time lies in [t, t + width).
    """
    power = spectrogram.power
    n_channels = power.shape[0] if power.ndim == 3 else 1
    if channels is not None:
        channels = [int(ch) for ch in channels]
        if not channels:
            raise ArgumentError("channel subset is empty")
        outside = [ch for ch in channels if not 0 <= ch < n_channels]
        if outside:
            raise ArgumentError(f"channel indices {outside} outside [0, {n_channels})")
    if power.ndim == 3:
        power = (power if channels is None else power[channels]).mean(axis=0)

    freq_masks = _band_masks(spectrogram.bin_freqs, grid.freq_starts, grid.freq_band_width, "frequency")
    time_masks = _band_masks(spectrogram.frame_times_s, grid.time_starts, grid.time_band_width, "time")

    sums = freq_masks.astype(float) @ power @ time_masks.astype(float).T
    counts = np.outer(freq_masks.sum(axis=1), time_masks.sum(axis=1))
    return BandEnergyMatrix(values=sums / counts, grid=grid)


def select_optimal_element(matrix: BandEnergyMatrix) -> BandSelection:
    """Grid coordinates of the maximum; ties go to the lowest frequency start, then the earliest time"""
    # row-major argmax returns the first maximum, which is exactly the tie-break order
    row, col = np.unravel_index(int(np.argmax(matrix.values)), matrix.values.shape)
    return BandSelection(
        freq_start=float(matrix.grid.freq_starts[row]),
        time_start=float(matrix.grid.time_starts[col]),
        energy=float(matrix.values[row, col]),
    )


def select_time_for_band(matrix: BandEnergyMatrix, freq_start: float) -> BandSelection:
    """Best temporal band inside the row of a frozen frequency start"""
    grid = matrix.grid
    row = int(np.argmin(np.abs(grid.freq_starts - freq_start)))
    if abs(grid.freq_starts[row] - freq_start) > 1e-9:
        raise ArgumentError(f"frequency start {freq_start} is not on the grid")
    col = int(np.argmax(matrix.values[row]))
    return BandSelection(
        freq_start=float(grid.freq_starts[row]),
        time_start=float(grid.time_starts[col]),
        energy=float(matrix.values[row, col]),
    )


def subject_frequency_band(selections: List[BandSelection], grid: Optional[BandGrid] = None) -> float:
    """Mean selected frequency start, rounded half-up to the nearest admissible grid start"""
    if not selections:
        raise ArgumentError("cannot average an empty list of selections")
    grid = grid or BandGrid()
    mean = float(np.mean([s.freq_start for s in selections]))
    steps = np.floor((mean - grid.freq_start_min) / grid.freq_start_step + 0.5)
    steps = min(max(steps, 0), grid.freq_count - 1)
    return float(grid.freq_start_min + steps * grid.freq_start_step)


def selection_spread(selections: List[BandSelection]) -> Tuple[float, float]:
    """Standard deviations of the selected frequency and time starts"""
    if not selections:
        raise ArgumentError("cannot summarise an empty list of selections")
    freqs = np.array([s.freq_start for s in selections])
    times = np.array([s.time_start for s in selections])
    return float(freqs.std()), float(times.std())


def crop_to_selection(
    trial: Trial, freq_start: float, time_start: float, grid: BandGrid, sampling_rate: float
) -> Trial:
    """Bandpass to [freq_start, freq_start + width] and cut [time_start, time_start + width]"""
    duration = trial.n_samples / sampling_rate
    if time_start < 0 or time_start + grid.time_band_width > duration + 1e-9:
        raise RangeError(
            f"crop [{time_start:g}, {time_start + grid.time_band_width:g}] s outside trial of {duration:g} s"
        )

    low = max(freq_start, MIN_LOW_EDGE_HZ)
    iir = cached_bandpass(CROP_FILTER_ORDER, float(low), float(freq_start + grid.freq_band_width), sampling_rate)
    filtered = filter_signal(iir, trial.samples)

    start = int(round(time_start * sampling_rate))
    stop = min(start + int(round(grid.time_band_width * sampling_rate)), trial.n_samples)
    return Trial(label=trial.label, samples=filtered[:, start:stop])
