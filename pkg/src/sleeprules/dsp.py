"""Signal-processing primitives shared by the detectors.

All functions are pure: the same input arrays give bit-identical outputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import signal

from .errors import BandError, InsufficientDataError

__all__ = [
    "Band",
    "PsdEstimate",
    "welch_psd",
    "relative_band_power",
    "sliding_band_ratio",
    "bandpass",
    "moving_rms",
]


@dataclass(frozen=True)
class Band:
    lo: float
    hi: float

    def __post_init__(self):
        if not (0 <= self.lo < self.hi):
            raise BandError(f"invalid band [{self.lo}, {self.hi}]")

    def check_nyquist(self, sample_rate: float) -> None:
        if self.hi > sample_rate / 2:
            raise BandError(
                f"band upper edge {self.hi} Hz exceeds Nyquist {sample_rate / 2} Hz"
            )


@dataclass(frozen=True)
class PsdEstimate:
    """One-sided power spectral density (units^2 / Hz)."""

    frequencies: np.ndarray
    power: np.ndarray
    window_len: float
    overlap: float
    segment_count: int

    @property
    def resolution(self) -> float:
        return float(self.frequencies[1] - self.frequencies[0])


def _as_band(band) -> Band:
    if isinstance(band, Band):
        return band
    lo, hi = band
    return Band(float(lo), float(hi))


@lru_cache(maxsize=32)
def _hann(n: int) -> np.ndarray:
    # Periodic Hann, the spectral-analysis convention.
    w = signal.get_window("hann", n)
    w.setflags(write=False)
    return w


def _periodograms(segments: np.ndarray, sample_rate: float) -> np.ndarray:
    """Hann-windowed, mean-detrended one-sided densities, one row per segment."""
    nperseg = segments.shape[-1]
    win = _hann(nperseg)
    detrended = segments - segments.mean(axis=-1, keepdims=True)
    spec = np.fft.rfft(detrended * win, axis=-1)
    power = (spec.real**2 + spec.imag**2) / (sample_rate * np.sum(win**2))
    if nperseg % 2 == 0:
        power[..., 1:-1] *= 2
    else:
        power[..., 1:] *= 2
    return power


def _segment_view(x: np.ndarray, nperseg: int, step: int) -> np.ndarray:
    windows = np.lib.stride_tricks.sliding_window_view(x, nperseg)
    return windows[::step]


def welch_psd(samples, sample_rate: float, window_len: float, overlap: float) -> PsdEstimate:
    """Welch power spectral density estimate.

    Parameters
    ----------
    samples : array_like
        1-D signal.
    sample_rate : float
        Sampling frequency in Hz.
    window_len : float
        Segment length in seconds.
    overlap : float
        Fraction of segment overlap in ``[0, 1)``; segments advance by
        ``window_len * (1 - overlap)``.

    Returns
    -------
    PsdEstimate
        Mean of the per-segment Hann-windowed periodograms.
    """
    x = np.asarray(samples, dtype=np.float64)
    if not 0 <= overlap < 1:
        raise ValueError(f"overlap must lie in [0, 1), got {overlap}")
    nperseg = int(round(window_len * sample_rate))
    if nperseg < 2 or x.size < nperseg:
        raise InsufficientDataError(
            f"need at least {nperseg} samples for a {window_len} s window, got {x.size}"
        )
    step = max(1, int(round(nperseg * (1 - overlap))))
    segments = _segment_view(x, nperseg, step)
    power = _periodograms(segments, sample_rate).mean(axis=0)
    freqs = np.fft.rfftfreq(nperseg, d=1.0 / sample_rate)
    return PsdEstimate(freqs, power, nperseg / sample_rate, overlap, segments.shape[0])


def _band_mask(freqs: np.ndarray, band: Band) -> np.ndarray:
    return (freqs >= band.lo) & (freqs <= band.hi)


def relative_band_power(psd: PsdEstimate, band) -> float:
    """Fraction of total power in bins whose centre lies in ``[lo, hi]``.

    Returns 0.0 when the total power is zero.
    """
    band = _as_band(band)
    total = float(np.sum(psd.power))
    if total <= 0:
        return 0.0
    return float(np.sum(psd.power[_band_mask(psd.frequencies, band)]) / total)


def sliding_band_ratio(samples, sample_rate: float, window_len: float, step: float, band,
                       chunk: int = 4096):
    """Relative band power of every sliding window.

    Each window gets a single periodogram, so the ratio of window ``k`` equals
    ``relative_band_power(welch_psd(window_k, sample_rate, window_len, 0), band)``.

    Returns
    -------
    starts : np.ndarray
        Window start times in seconds.
    ratios : np.ndarray
        Relative band power per window.
    """
    x = np.asarray(samples, dtype=np.float64)
    band = _as_band(band)
    nperseg = int(round(window_len * sample_rate))
    nstep = max(1, int(round(step * sample_rate)))
    if x.size < nperseg:
        return np.empty(0), np.empty(0)
    windows = _segment_view(x, nperseg, nstep)
    mask = _band_mask(np.fft.rfftfreq(nperseg, d=1.0 / sample_rate), band)
    ratios = np.empty(windows.shape[0])
    for i in range(0, windows.shape[0], chunk):
        power = _periodograms(windows[i:i + chunk], sample_rate)
        total = power.sum(axis=1)
        inband = power[:, mask].sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            ratios[i:i + chunk] = np.where(total > 0, inband / total, 0.0)
    starts = np.arange(windows.shape[0]) * nstep / sample_rate
    return starts, ratios


@lru_cache(maxsize=64)
def _butter_sos(sample_rate: float, lo: float, hi: float, order: int) -> np.ndarray:
    return signal.butter(order, [lo, hi], btype="bandpass", fs=sample_rate, output="sos")


def bandpass(samples, sample_rate: float, band, order: int = 4) -> np.ndarray:
    """Zero-phase Butterworth band-pass (forward-backward ``sosfiltfilt``)."""
    band = _as_band(band)
    nyq = sample_rate / 2
    if not (0 < band.lo < band.hi < nyq):
        raise BandError(f"band [{band.lo}, {band.hi}] Hz must lie inside (0, {nyq}) Hz")
    x = np.asarray(samples, dtype=np.float64)
    if x.size == 0:
        return x.copy()
    sos = _butter_sos(float(sample_rate), band.lo, band.hi, order)
    padlen = min(3 * (2 * sos.shape[0] + 1), x.size - 1)
    return signal.sosfiltfilt(sos, x, padlen=padlen)


def moving_rms(samples, sample_rate: float, window: float) -> np.ndarray:
    """Centred moving RMS over ``window`` seconds.

    The window spans ``2 * (n // 2) + 1`` samples with ``n = round(window *
    sample_rate)``; near the edges it is truncated to the available samples.
    """
    x = np.asarray(samples, dtype=np.float64)
    n = int(round(window * sample_rate))
    if n < 1:
        raise ValueError("window must cover at least one sample")
    if x.size == 0:
        return x.copy()
    half = n // 2
    # Direct summation per window: a running cumulative sum drifts over a
    # night-long signal and breaks exact threshold comparisons.
    sums = np.convolve(x * x, np.ones(2 * half + 1), mode="full")[half:half + x.size]
    idx = np.arange(x.size)
    counts = np.minimum(idx + half + 1, x.size) - np.maximum(idx - half, 0)
    mean_sq = sums / counts
    return np.sqrt(np.maximum(mean_sq, 0.0))
