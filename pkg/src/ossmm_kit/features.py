"""Per-epoch feature extraction: 8 pulse + 12 movement + 22 EOG/EEG = 42.

The catalog order below is frozen; it is the column order of every
feature CSV and the axis every trained model indexes. Appending is
safe, reordering is not.

Extraction runs on qualified epochs only. Degenerate inputs (flat PPG,
no detectable beats) impute 0.0 for the affected features rather than
NaN, so downstream matrices are always finite.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
from scipy import signal as sps

from . import dsp
from .errors import UnqualifiedEpochError, ValidationError, WrongHeaderError
from .ingest import decode_imu
from .model import (
    ADC_MAX,
    FS_HZ,
    FeatureVector,
    LabeledEpoch,
    SleepStage,
    stage_from_label,
)

# --- tunables (single source, referenced by tests) --------------------------

PPG_LOWPASS_HZ = 10.0
PPG_LOWPASS_ORDER = 4
HR_BAND_HZ = (0.66, 3.0)            # 40..180 BPM search band
HR_MIN_PEAK_SPACING_S = 0.28
HR_PROMINENCE_SCALE = 0.25          # fraction of the p10..p90 amplitude span
ENTROPY_BAND_HZ = (0.0, 10.0)

MOVEMENT_K_SIGMA = 8.0
MOVEMENT_MIN_GAP_S = 0.5
SACCADE_K_SIGMA = 6.0
SACCADE_MIN_GAP_S = 0.3

SPINDLE_BAND_HZ = (11.0, 16.0)
SPINDLE_ENV_WIN_S = 0.2
SPINDLE_THRESHOLD_FACTOR = 3.0
SPINDLE_MIN_S = 0.4
SPINDLE_MAX_S = 2.5

_EPS = 1e-15


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    family: str
    description: str


def _specs(family: str, entries: list[tuple[str, str]]) -> tuple[FeatureSpec, ...]:
    return tuple(FeatureSpec(f"{family}.{n}", family, d) for n, d in entries)


PULSE_FEATURES = _specs("pulse", [
    ("hr_bpm_spectral", "heart rate from the PPG spectral peak in the 40-180 BPM band"),
    ("hr_harmonic_score", "PSD at twice the spectral peak over PSD at the peak"),
    ("hr_bpm_peaks", "heart rate from the median inter-beat interval of detected peaks"),
    ("ibi_sdnn_ms", "standard deviation of inter-beat intervals"),
    ("ibi_rmssd_ms", "root mean square of successive inter-beat differences"),
    ("hr_halves_delta_bpm", "peak-based heart rate of the second half minus the first"),
    ("ppg_amplitude_iqr", "interquartile range of the low-passed PPG"),
    ("ppg_spectral_entropy", "normalized spectral entropy of PPG below 10 Hz"),
])

IMU_FEATURES = _specs("imu", [
    ("accel_mag_mean", "mean magnitude of the per-epoch-centered accelerometer"),
    ("accel_mag_std", "std of the centered accelerometer magnitude"),
    ("accel_mag_max", "max of the centered accelerometer magnitude"),
    ("accel_mag_iqr", "interquartile range of the centered accelerometer magnitude"),
    ("gyro_mag_mean", "mean magnitude of the per-epoch-centered gyroscope"),
    ("gyro_mag_std", "std of the centered gyroscope magnitude"),
    ("gyro_mag_max", "max of the centered gyroscope magnitude"),
    ("gyro_mag_iqr", "interquartile range of the centered gyroscope magnitude"),
    ("accel_jerk_rms", "RMS of the first-difference accelerometer vector magnitude"),
    ("gyro_jerk_rms", "RMS of the first-difference gyroscope vector magnitude"),
    ("movement_event_count", "movement bursts on the accelerometer magnitude"),
    ("movement_fraction", "fraction of samples inside the movement outlier mask"),
])

EOG_FEATURES = _specs("eog", [
    ("delta_power", "absolute band power below 4 Hz"),
    ("theta_power", "absolute band power 4-8 Hz"),
    ("alpha_power", "absolute band power 8-13 Hz"),
    ("beta_power", "absolute band power 13-30 Hz"),
    ("gamma_power", "absolute band power 30-100 Hz"),
    ("rel_delta", "delta power as a fraction of total power"),
    ("rel_theta", "theta power as a fraction of total power"),
    ("rel_alpha", "alpha power as a fraction of total power"),
    ("rel_beta", "beta power as a fraction of total power"),
    ("rel_gamma", "gamma power as a fraction of total power"),
    ("total_power", "integrated one-sided PSD (variance of the windowed signal)"),
    ("std", "standard deviation of the raw counts"),
    ("iqr", "interquartile range of the raw counts"),
    ("range", "max minus min of the raw counts"),
    ("zero_crossing_rate", "mean-crossings per second"),
    ("kurtosis", "excess kurtosis of the raw counts"),
    ("skewness", "skewness of the raw counts"),
    ("sef95", "frequency below which 95% of spectral power lies"),
    ("saccade_event_count", "abrupt-deflection events on the first difference"),
    ("saturation_fraction", "fraction of samples pinned at an ADC rail"),
    ("spindle_band_power", "absolute band power 11-16 Hz"),
    ("spindle_event_count", "envelope bursts of 0.4-2.5 s in the 11-16 Hz band"),
])

FEATURE_CATALOG: tuple[FeatureSpec, ...] = PULSE_FEATURES + IMU_FEATURES + EOG_FEATURES
FEATURE_NAMES: tuple[str, ...] = tuple(f.name for f in FEATURE_CATALOG)
N_FEATURES = len(FEATURE_CATALOG)

_PPG_FILTER = dsp.design_butterworth_lowpass(PPG_LOWPASS_ORDER, PPG_LOWPASS_HZ, FS_HZ)
_SPINDLE_FILTER = dsp.design_butterworth_bandpass(4, *SPINDLE_BAND_HZ, FS_HZ)


# --- pulse -----------------------------------------------------------------

def _quadratic_peak(freqs: np.ndarray, power: np.ndarray, i: int,
                    df: float) -> float:
    """Refine a peak bin by fitting a parabola through its neighbors."""
    if i <= 0 or i >= power.size - 1:
        return float(freqs[i])
    y1, y2, y3 = power[i - 1], power[i], power[i + 1]
    denom = y1 - 2.0 * y2 + y3
    if denom >= 0.0:                 # not a local max in the parabolic sense
        return float(freqs[i])
    shift = 0.5 * (y1 - y3) / denom
    return float(freqs[i] + np.clip(shift, -0.5, 0.5) * df)


def _find_beats(x: np.ndarray) -> np.ndarray:
    """Peak indices of a low-passed PPG trace, or an empty array."""
    lo, hi = np.percentile(x, [10.0, 90.0])
    prom = HR_PROMINENCE_SCALE * (hi - lo)
    if prom <= 0.0:
        return np.empty(0, dtype=np.int64)
    peaks, _ = sps.find_peaks(x, distance=int(HR_MIN_PEAK_SPACING_S * FS_HZ),
                              prominence=prom)
    return peaks


def _hr_from_peaks(peaks: np.ndarray) -> float:
    """Median-IBI heart rate, 0.0 when fewer than 3 beats were found."""
    if peaks.size < 3:
        return 0.0
    ibis_ms = np.diff(peaks) * (1000.0 / FS_HZ)
    return 60_000.0 / float(np.median(ibis_ms))


def extract_pulse(ppg_counts: np.ndarray, fs_hz: float = FS_HZ) -> np.ndarray:
    # detrend before the causal filter: a zero-state filter hit with a
    # large DC offset rings for ~0.1 s, which would fabricate beats
    x = dsp.filter_forward(_PPG_FILTER,
                           dsp.detrend_mean(np.asarray(ppg_counts, dtype=np.float64)))
    psd = dsp.periodogram(x, fs_hz, window_kind="hamming")

    hr_spectral = 0.0
    harmonic = 0.0
    band = (psd.freqs_hz >= HR_BAND_HZ[0]) & (psd.freqs_hz <= HR_BAND_HZ[1])
    band_idx = np.flatnonzero(band)
    if band_idx.size and float(psd.power[band_idx].max()) > _EPS:
        i = int(band_idx[np.argmax(psd.power[band_idx])])
        f0 = _quadratic_peak(psd.freqs_hz, psd.power, i, psd.df_hz)
        hr_spectral = 60.0 * f0
        j = int(round(2.0 * f0 / psd.df_hz))
        if j < psd.power.size:
            harmonic = float(psd.power[j] / psd.power[i])

    peaks = _find_beats(x)
    hr_peaks = _hr_from_peaks(peaks)
    sdnn = rmssd = 0.0
    if peaks.size >= 3:
        ibis = np.diff(peaks) * (1000.0 / fs_hz)
        if ibis.size >= 2:
            sdnn = float(np.std(ibis, ddof=1))
            rmssd = float(np.sqrt(np.mean(np.diff(ibis) ** 2)))

    half = x.size // 2
    hr_a = _hr_from_peaks(_find_beats(x[:half]))
    hr_b = _hr_from_peaks(_find_beats(x[half:]))
    halves_delta = hr_b - hr_a if (hr_a > 0.0 and hr_b > 0.0) else 0.0

    q25, q75 = np.percentile(x, [25.0, 75.0])

    ent_band = (psd.freqs_hz > ENTROPY_BAND_HZ[0]) & (psd.freqs_hz <= ENTROPY_BAND_HZ[1])
    p = psd.power[ent_band]
    total = float(p.sum())
    if total > _EPS and p.size > 1:
        q = p / total
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(q > 0.0, q * np.log(q), 0.0)
        entropy = float(-terms.sum() / np.log(p.size))
    else:
        entropy = 0.0

    return np.array([hr_spectral, harmonic, hr_peaks, sdnn, rmssd,
                     halves_delta, float(q75 - q25), entropy])


# --- movement --------------------------------------------------------------

def extract_imu(accel: np.ndarray, gyro: np.ndarray,
                fs_hz: float = FS_HZ) -> np.ndarray:
    """accel and gyro are (3, n) arrays of signed counts. Each axis is
    centered per epoch before taking magnitudes, so a steady posture
    reads as zero regardless of orientation.
    """
    accel = np.asarray(accel, dtype=np.float64)
    gyro = np.asarray(gyro, dtype=np.float64)
    if accel.shape[0] != 3 or gyro.shape[0] != 3:
        raise ValidationError("extract_imu expects (3, n) axis stacks")

    out = []
    mags = {}
    for name, sig in (("accel", accel), ("gyro", gyro)):
        centered = sig - sig.mean(axis=1, keepdims=True)
        mag = np.sqrt(np.sum(centered ** 2, axis=0))
        mags[name] = mag
        q25, q75 = np.percentile(mag, [25.0, 75.0])
        out.extend([float(mag.mean()), float(mag.std()),
                    float(mag.max()), float(q75 - q25)])

    for sig in (accel, gyro):
        jerk = np.diff(sig, axis=1)
        jmag2 = np.sum(jerk ** 2, axis=0)
        out.append(float(np.sqrt(jmag2.mean())) if jmag2.size else 0.0)

    events = dsp.adaptive_threshold_events(mags["accel"], MOVEMENT_K_SIGMA,
                                           MOVEMENT_MIN_GAP_S, fs_hz)
    mask = dsp.robust_outlier_mask(mags["accel"], MOVEMENT_K_SIGMA)
    out.append(float(len(events)))
    out.append(float(mask.mean()))
    return np.array(out)


# --- EOG/EEG ---------------------------------------------------------------

def detect_spindles(eog: np.ndarray, fs_hz: float = FS_HZ) -> list[tuple[int, int]]:
    """Burst events in the 11-16 Hz band as half-open sample ranges.

    Envelope = 0.2 s boxcar over the rectified band-passed signal;
    threshold = 3x the epoch's median envelope. A near-silent band makes
    that threshold collapse toward zero and would turn the whole epoch
    into one giant run, so when the median is degenerate the threshold
    falls back to half the envelope maximum.
    """
    x = dsp.detrend_mean(np.asarray(eog, dtype=np.float64))
    y = dsp.filter_forward(_SPINDLE_FILTER, x)
    env = dsp.moving_average(np.abs(y), int(round(SPINDLE_ENV_WIN_S * fs_hz)))
    if env.size == 0 or float(env.max()) <= 0.0:
        return []
    thr = SPINDLE_THRESHOLD_FACTOR * float(np.median(env))
    if thr <= 0.0:
        thr = 0.5 * float(env.max())
    above = env > thr
    if not above.any():
        return []
    edges = np.flatnonzero(np.diff(above.astype(np.int8)))
    starts = list(edges[above[edges + 1]] + 1)
    ends = list(edges[~above[edges + 1]] + 1)
    if above[0]:
        starts.insert(0, 0)
    if above[-1]:
        ends.append(above.size)
    lo, hi = SPINDLE_MIN_S * fs_hz, SPINDLE_MAX_S * fs_hz
    return [(s, e) for s, e in zip(starts, ends) if lo <= (e - s) <= hi]


def extract_eog(eog_counts: np.ndarray, fs_hz: float = FS_HZ) -> np.ndarray:
    x = np.asarray(eog_counts, dtype=np.float64)
    psd = dsp.periodogram(x, fs_hz, window_kind="tukey", taper=0.10)
    bp = dsp.band_powers(psd)
    total = psd.total_power

    rel = {name: (v / total if total > _EPS else 0.0)
           for name, v in bp.as_dict().items()}

    xd = x - x.mean()
    # signbit transitions rather than a product test: samples landing
    # exactly on the mean would otherwise swallow a crossing
    sb = np.signbit(xd)
    crossings = int(np.count_nonzero(sb[1:] != sb[:-1]))
    zcr = crossings / (x.size / fs_hz)

    m2 = float(np.mean(xd ** 2))
    if m2 > _EPS:
        skew = float(np.mean(xd ** 3)) / m2 ** 1.5
        kurt = float(np.mean(xd ** 4)) / m2 ** 2 - 3.0
    else:
        skew = kurt = 0.0

    if total > _EPS:
        cum = np.cumsum(psd.power) * psd.df_hz
        sef95 = float(psd.freqs_hz[int(np.searchsorted(cum, 0.95 * total))])
    else:
        sef95 = 0.0

    d = np.diff(x)
    saccades = dsp.adaptive_threshold_events(d, SACCADE_K_SIGMA,
                                             SACCADE_MIN_GAP_S, fs_hz) if d.size else []

    saturation = float(np.mean((eog_counts <= 0) | (eog_counts >= ADC_MAX)))

    q25, q75 = np.percentile(x, [25.0, 75.0])
    spindle_power = dsp.band_power(psd, *SPINDLE_BAND_HZ)
    spindles = detect_spindles(x, fs_hz)

    return np.array([
        bp.delta, bp.theta, bp.alpha, bp.beta, bp.gamma,
        rel["delta"], rel["theta"], rel["alpha"], rel["beta"], rel["gamma"],
        total, float(x.std()), float(q75 - q25), float(x.max() - x.min()),
        zcr, kurt, skew, sef95,
        float(len(saccades)), saturation, spindle_power, float(len(spindles)),
    ])


# --- per-epoch assembly ------------------------------------------------------

def extract_epoch(epoch: LabeledEpoch, fs_hz: float = FS_HZ) -> FeatureVector:
    if not epoch.qualified:
        raise UnqualifiedEpochError(
            f"night {epoch.night_id} epoch {epoch.epoch_idx}: "
            f"{epoch.sample_count} samples, stage {epoch.stage.display}")
    ch = epoch.frames.channels
    pulse = extract_pulse(ch["ppg"], fs_hz)
    accel = np.stack([decode_imu(ch[a]) for a in ("ax", "ay", "az")])
    gyro = np.stack([decode_imu(ch[g]) for g in ("gx", "gy", "gz")])
    imu = extract_imu(accel, gyro, fs_hz)
    eog = extract_eog(ch["eog"], fs_hz)
    values = np.concatenate([pulse, imu, eog])
    assert values.shape == (N_FEATURES,)
    return FeatureVector(epoch.night_id, epoch.epoch_idx, epoch.stage, values)


def extract_epochs(epochs: list[LabeledEpoch], fs_hz: float = FS_HZ
                   ) -> list[FeatureVector]:
    """Extract every qualified epoch, silently skipping excluded ones."""
    return [extract_epoch(e, fs_hz) for e in epochs if e.qualified]


# --- feature tables ----------------------------------------------------------

CSV_META_COLUMNS = ("night_id", "epoch_idx", "stage")
CSV_HEADER = CSV_META_COLUMNS + FEATURE_NAMES


@dataclass
class FeatureTable:
    """Column-aligned feature matrix for a set of epochs."""

    night_ids: np.ndarray        # str
    epoch_idx: np.ndarray        # int64
    stages: np.ndarray           # int64 SleepStage values
    X: np.ndarray                # (n, N_FEATURES) float64

    def __len__(self) -> int:
        return int(self.X.shape[0])

    @classmethod
    def from_vectors(cls, vectors: list[FeatureVector]) -> "FeatureTable":
        if not vectors:
            return cls(np.empty(0, dtype=object), np.empty(0, dtype=np.int64),
                       np.empty(0, dtype=np.int64), np.empty((0, N_FEATURES)))
        return cls(
            np.array([v.night_id for v in vectors], dtype=object),
            np.array([v.epoch_idx for v in vectors], dtype=np.int64),
            np.array([int(v.stage) for v in vectors], dtype=np.int64),
            np.vstack([v.values for v in vectors]),
        )

    def select_nights(self, night_ids) -> "FeatureTable":
        wanted = set(night_ids)
        mask = np.array([nid in wanted for nid in self.night_ids], dtype=bool)
        return FeatureTable(self.night_ids[mask], self.epoch_idx[mask],
                            self.stages[mask], self.X[mask])

    def stage_counts(self) -> dict[str, int]:
        return {SleepStage(s).display: int(np.sum(self.stages == s))
                for s in sorted(set(self.stages.tolist()))}

    def write_csv(self, path: Path) -> None:
        """Hand-rolled writer: floats via repr so reruns are byte-identical
        and values survive a read round-trip exactly.
        """
        lines = [",".join(CSV_HEADER)]
        for i in range(len(self)):
            stage = SleepStage(int(self.stages[i])).display
            cells = [str(self.night_ids[i]), str(int(self.epoch_idx[i])), stage]
            cells.extend(repr(float(v)) for v in self.X[i])
            lines.append(",".join(cells))
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def read_csv(cls, path: Path) -> "FeatureTable":
        df = pd.read_csv(path, dtype={"night_id": str},
                         float_precision="round_trip")
        if tuple(df.columns) != CSV_HEADER:
            raise WrongHeaderError(
                f"{path}: feature columns do not match the catalog")
        stages = np.array([int(stage_from_label(s)) for s in df["stage"]],
                          dtype=np.int64)
        return cls(df["night_id"].to_numpy(dtype=object),
                   df["epoch_idx"].to_numpy(dtype=np.int64),
                   stages,
                   df[list(FEATURE_NAMES)].to_numpy(dtype=np.float64))


# --- standardization ---------------------------------------------------------

STD_FLOOR = 1e-9


@dataclass
class StandardizationStats:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray) -> "StandardizationStats":
        if X.shape[0] == 0:
            raise ValidationError("cannot fit standardization on zero rows")
        std = X.std(axis=0)
        return cls(X.mean(axis=0), np.maximum(std, STD_FLOOR))

    def apply(self, X: np.ndarray) -> np.ndarray:
        if X.shape[1] != self.mean.shape[0]:
            raise ValidationError(
                f"feature width {X.shape[1]} != fitted width {self.mean.shape[0]}")
        return (X - self.mean) / self.std
