"""Deterministic signal kernels shared by feature extraction and synthesis.

Everything here is a pure function of its inputs: no global state, no
hidden RNG, float64 throughout. Filtering is causal (direct-form II
transposed with zero initial state) because the online stager must see
exactly the same filtered signal as offline extraction; zero-phase
schemes would need future samples.

Conventions:
* Spectra are one-sided periodograms normalized by fs * sum(w^2), so
  integrating power * df recovers the variance of the windowed,
  detrended input (Parseval, window-gain corrected).
* Band edges are lower-inclusive, upper-exclusive: a bin at exactly
  4.0 Hz belongs to theta, not delta.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal as sps

from .errors import (
    BandOutOfRangeError,
    EmptyInputError,
    InvalidCutoffError,
    ValidationError,
    WindowTooLongError,
)

# Canonical EEG/EOG band plan, in catalog order.
BAND_EDGES: dict[str, tuple[float, float]] = {
    "delta": (0.0, 4.0),
    "theta": (4.0, 8.0),
    "alpha": (8.0, 13.0),
    "beta": (13.0, 30.0),
    "gamma": (30.0, 100.0),
}
BAND_NAMES = tuple(BAND_EDGES)


@dataclass
class IirFilter:
    """Transfer-function coefficients b/a plus the design metadata that
    produced them, so serialized configs can name the filter exactly.
    """

    b: np.ndarray
    a: np.ndarray
    order: int
    kind: str                 # "lowpass" | "bandpass"
    edges_hz: tuple[float, ...]
    fs_hz: float


def design_butterworth_lowpass(order: int, cutoff_hz: float, fs_hz: float) -> IirFilter:
    """Butterworth low-pass via the bilinear transform.

    The cutoff must sit strictly inside (0, fs/2); at or beyond Nyquist
    the analog prototype has nothing to map to.
    """
    if order < 1:
        raise InvalidCutoffError(f"filter order must be >= 1, got {order}")
    nyq = fs_hz / 2.0
    if not (0.0 < cutoff_hz < nyq):
        raise InvalidCutoffError(
            f"cutoff {cutoff_hz} Hz must lie strictly between 0 and Nyquist {nyq} Hz")
    b, a = sps.butter(order, cutoff_hz, btype="lowpass", fs=fs_hz)
    return IirFilter(np.asarray(b, float), np.asarray(a, float),
                     order, "lowpass", (float(cutoff_hz),), float(fs_hz))


def design_butterworth_bandpass(order: int, lo_hz: float, hi_hz: float,
                                fs_hz: float) -> IirFilter:
    if order < 1:
        raise InvalidCutoffError(f"filter order must be >= 1, got {order}")
    nyq = fs_hz / 2.0
    if not (0.0 < lo_hz < hi_hz < nyq):
        raise InvalidCutoffError(
            f"band ({lo_hz}, {hi_hz}) Hz must satisfy 0 < lo < hi < Nyquist {nyq} Hz")
    b, a = sps.butter(order, (lo_hz, hi_hz), btype="bandpass", fs=fs_hz)
    return IirFilter(np.asarray(b, float), np.asarray(a, float),
                     order, "bandpass", (float(lo_hz), float(hi_hz)), float(fs_hz))


def filter_forward(filt: IirFilter, x: np.ndarray) -> np.ndarray:
    """Single forward pass, zero initial state. Causal by construction."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValidationError(f"expected a 1-D signal, got shape {x.shape}")
    if x.size == 0:
        return x.copy()
    return sps.lfilter(filt.b, filt.a, x)


def detrend_mean(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        return x.copy()
    return x - x.mean()


def window(kind: str, n: int, taper: float = 0.10) -> np.ndarray:
    """Symmetric analysis window. kind is "hamming", "tukey", or "rect";
    taper is the Tukey cosine fraction and ignored otherwise.
    """
    if n < 1:
        raise EmptyInputError("window length must be >= 1")
    if kind == "hamming":
        return sps.windows.hamming(n, sym=True)
    if kind == "tukey":
        return sps.windows.tukey(n, alpha=taper, sym=True)
    if kind == "rect":
        return np.ones(n, dtype=np.float64)
    raise ValidationError(f"unknown window kind: {kind!r}")


@dataclass
class Psd:
    """One-sided power spectral density on the rfft grid."""

    freqs_hz: np.ndarray
    power: np.ndarray
    df_hz: float

    @property
    def total_power(self) -> float:
        return float(np.sum(self.power) * self.df_hz)


def periodogram(x: np.ndarray, fs_hz: float, window_kind: str = "tukey",
                taper: float = 0.10) -> Psd:
    """Mean-detrended, windowed, one-sided periodogram.

    Power is scaled by 1 / (fs * sum(w^2)) with interior bins doubled,
    so sum(power) * df equals the variance of the windowed signal
    divided by the window's mean-square gain. That identity is what the
    downstream band powers rely on.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValidationError(f"expected a 1-D signal, got shape {x.shape}")
    n = x.size
    if n < 2:
        raise EmptyInputError(f"periodogram needs at least 2 samples, got {n}")
    w = window(window_kind, n, taper)
    xw = detrend_mean(x) * w
    spec = np.fft.rfft(xw)
    scale = 1.0 / (fs_hz * float(np.sum(w * w)))
    power = (spec.real ** 2 + spec.imag ** 2) * scale
    # one-sided: double everything except DC and (for even n) Nyquist
    if n % 2 == 0:
        power[1:-1] *= 2.0
    else:
        power[1:] *= 2.0
    freqs = np.fft.rfftfreq(n, d=1.0 / fs_hz)
    return Psd(freqs, power, fs_hz / n)


def band_power(psd: Psd, lo_hz: float, hi_hz: float) -> float:
    """Integrated power over [lo, hi) by the rectangle rule."""
    if hi_hz <= lo_hz:
        raise BandOutOfRangeError(f"band ({lo_hz}, {hi_hz}) Hz is empty or inverted")
    nyq = float(psd.freqs_hz[-1])
    if hi_hz > nyq:
        raise BandOutOfRangeError(
            f"band upper edge {hi_hz} Hz exceeds Nyquist {nyq} Hz")
    mask = (psd.freqs_hz >= lo_hz) & (psd.freqs_hz < hi_hz)
    return float(np.sum(psd.power[mask]) * psd.df_hz)


@dataclass
class BandPowers:
    delta: float
    theta: float
    alpha: float
    beta: float
    gamma: float

    def as_dict(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in BAND_NAMES}


def band_powers(psd: Psd) -> BandPowers:
    """All five canonical bands at once. Raises if the sample rate cannot
    reach the gamma upper edge: silently truncating the band would make
    gamma power incomparable across recordings.
    """
    return BandPowers(**{name: band_power(psd, lo, hi)
                         for name, (lo, hi) in BAND_EDGES.items()})


def spectrogram(x: np.ndarray, fs_hz: float, win_s: float = 1.0,
                hop_s: float = 0.25, window_kind: str = "tukey",
                taper: float = 0.10) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sliding-window periodogram sequence.

    Returns (freqs_hz, times_s, S) with S of shape (n_freqs, n_windows)
    and times at window centers. Window starts advance by the hop; the
    final partial window is dropped rather than padded.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    n_win = int(round(win_s * fs_hz))
    n_hop = max(1, int(round(hop_s * fs_hz)))
    if n_win < 2:
        raise EmptyInputError(f"spectrogram window of {n_win} samples is too short")
    if n_win > n:
        raise WindowTooLongError(
            f"window of {n_win} samples exceeds signal of {n} samples")
    starts = np.arange(0, n - n_win + 1, n_hop)
    w = window(window_kind, n_win, taper)
    scale = 1.0 / (fs_hz * float(np.sum(w * w)))
    segs = np.lib.stride_tricks.sliding_window_view(x, n_win)[starts]
    segs = (segs - segs.mean(axis=1, keepdims=True)) * w
    spec = np.fft.rfft(segs, axis=1)
    S = (spec.real ** 2 + spec.imag ** 2) * scale
    if n_win % 2 == 0:
        S[:, 1:-1] *= 2.0
    else:
        S[:, 1:] *= 2.0
    freqs = np.fft.rfftfreq(n_win, d=1.0 / fs_hz)
    times = (starts + n_win / 2.0) / fs_hz
    return freqs, times, S.T


def robust_sigma(x: np.ndarray) -> tuple[float, float]:
    """(median, MAD-based sigma). 1.4826 makes MAD consistent with the
    standard deviation under a normal model.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise EmptyInputError("robust_sigma needs at least 1 sample")
    med = float(np.median(x))
    mad = float(np.median(np.abs(x - med)))
    return med, 1.4826 * mad


def robust_outlier_mask(x: np.ndarray, k_sigma: float) -> np.ndarray:
    """Boolean mask of samples with |x - median| strictly above k * sigma.

    A flat signal has sigma 0, so any deviation at all is flagged; a
    perfectly constant signal flags nothing.
    """
    x = np.asarray(x, dtype=np.float64)
    med, sigma = robust_sigma(x)
    return np.abs(x - med) > k_sigma * sigma


def adaptive_threshold_events(x: np.ndarray, k_sigma: float, min_gap_s: float,
                              fs_hz: float) -> list[tuple[int, int]]:
    """Contiguous outlier runs as half-open sample ranges [start, end).

    Runs separated by less than min_gap_s are merged into one event, so
    a burst with brief sub-threshold dips still reads as a single event.
    """
    mask = robust_outlier_mask(x, k_sigma)
    if not mask.any():
        return []
    edges = np.flatnonzero(np.diff(mask.astype(np.int8)))
    starts = list(edges[mask[edges + 1]] + 1)
    ends = list(edges[~mask[edges + 1]] + 1)
    if mask[0]:
        starts.insert(0, 0)
    if mask[-1]:
        ends.append(mask.size)
    min_gap = int(round(min_gap_s * fs_hz))
    merged: list[tuple[int, int]] = []
    for s, e in zip(starts, ends):
        if merged and s - merged[-1][1] < min_gap:
            merged[-1] = (merged[-1][0], e)
        else:
            merged.append((s, e))
    return merged


def moving_average(x: np.ndarray, win_samples: int) -> np.ndarray:
    """Centered boxcar average, same length as the input."""
    x = np.asarray(x, dtype=np.float64)
    if win_samples < 1:
        raise EmptyInputError("moving average window must be >= 1 sample")
    if x.size == 0:
        return x.copy()
    kernel = np.full(win_samples, 1.0 / win_samples)
    return np.convolve(x, kernel, mode="same")
