"""Seeded generator of synthetic overnight recordings with known truth.

Every night is built from per-stage signal recipes (StageProfile): an
EOG noise mixture with stage-specific band weights, spindle bursts in
light sleep, saccade steps in REM, a pulsatile PPG whose rate and
beat-to-beat variability follow the stage, and IMU channels that are
quiet except for movement bursts. A Markov walk over the stage
adjacency graph produces the hypnogram, and the label files are written
through the same writers the ingest module reads with, so a generated
corpus round-trips by construction.

The quantitative constants below are invented, tuned only so that the
feature extractor measures the intended stage contrasts; they live in
this one module so re-tuning never touches the pipeline. Ground truth
(hypnogram, injected event counts and times, boundary trims) is written
to a truth.json sidecar per night for tests and inspection.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

from . import __version__
from .errors import OssmmError, ValidationError
from .ingest import (
    FRAMES_FILE,
    LABELS_FILE,
    MANIFEST_FILE,
    META_FILE,
    encode_imu,
    write_frames_csv,
    write_labels_json,
    write_night_meta,
)
from .model import (
    EPOCH_MS,
    FS_HZ,
    SAMPLES_PER_EPOCH,
    FrameBlock,
    NightRecording,
    SleepStage,
    StageLabel,
    parse_utc,
)

EPOCH_S = EPOCH_MS / 1000.0

# Typical overnight stage mix for one healthy adult; the hypnogram walk
# steers toward these shares.
TARGET_MIX = {
    SleepStage.DEEP: 0.1493,
    SleepStage.LIGHT: 0.4828,
    SleepStage.REM: 0.2358,
    SleepStage.WAKE: 0.1321,
}

# Stage adjacency: wake borders light sleep, deep and REM are entered
# and left through light sleep.
ADJACENT = {
    SleepStage.WAKE: (SleepStage.LIGHT,),
    SleepStage.LIGHT: (SleepStage.WAKE, SleepStage.DEEP, SleepStage.REM),
    SleepStage.DEEP: (SleepStage.LIGHT,),
    SleepStage.REM: (SleepStage.LIGHT,),
}

# Per-epoch probability of staying in the current stage (geometric
# dwell times of roughly 4.5 to 8 epochs).
P_STAY = {
    SleepStage.WAKE: 0.78,
    SleepStage.LIGHT: 0.85,
    SleepStage.DEEP: 0.87,
    SleepStage.REM: 0.87,
}

_STEER_FLOOR = 0.02


@dataclass(frozen=True)
class StageProfile:
    """Signal recipe for one stage.

    band_sigma holds the EOG component amplitudes (standard deviation in
    ADC counts) for the delta/theta/alpha/beta bands; the remaining
    fields are event rates per minute and pulse parameters. The alpha
    amplitudes are deliberately ordered deep < REM < light < wake so the
    alpha band carries a clean four-way contrast.
    """

    stage: SleepStage
    band_sigma: tuple[float, float, float, float]
    spindle_rate_per_min: float
    saccade_rate_per_min: float
    clip_rate_per_min: float
    movement_rate_per_min: float
    hr_bpm: float
    hr_jitter_bpm: float
    rsa_depth: float

    def validate(self) -> None:
        if any(s < 0 for s in self.band_sigma):
            raise ValidationError(f"{self.stage.display}: negative band amplitude")
        for name in ("spindle_rate_per_min", "saccade_rate_per_min",
                     "clip_rate_per_min", "movement_rate_per_min"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{self.stage.display}: {name} must be >= 0")
        if not 40.0 <= self.hr_bpm <= 180.0:
            raise ValidationError(f"{self.stage.display}: hr_bpm outside 40..180")
        if self.hr_jitter_bpm < 0 or not 0.0 <= self.rsa_depth < 0.5:
            raise ValidationError(f"{self.stage.display}: bad pulse variability recipe")


DEFAULT_PROFILES: dict[SleepStage, StageProfile] = {
    SleepStage.WAKE: StageProfile(
        SleepStage.WAKE, band_sigma=(7.0, 5.0, 22.0, 10.0),
        spindle_rate_per_min=0.0, saccade_rate_per_min=1.5,
        clip_rate_per_min=0.4, movement_rate_per_min=4.0,
        hr_bpm=64.0, hr_jitter_bpm=5.0, rsa_depth=0.05),
    SleepStage.LIGHT: StageProfile(
        SleepStage.LIGHT, band_sigma=(14.0, 9.0, 12.0, 5.0),
        spindle_rate_per_min=4.0, saccade_rate_per_min=0.3,
        clip_rate_per_min=0.05, movement_rate_per_min=0.5,
        hr_bpm=58.0, hr_jitter_bpm=4.0, rsa_depth=0.04),
    SleepStage.DEEP: StageProfile(
        SleepStage.DEEP, band_sigma=(34.0, 10.0, 4.5, 3.0),
        spindle_rate_per_min=0.0, saccade_rate_per_min=0.1,
        clip_rate_per_min=0.02, movement_rate_per_min=0.05,
        hr_bpm=55.0, hr_jitter_bpm=3.5, rsa_depth=0.025),
    SleepStage.REM: StageProfile(
        SleepStage.REM, band_sigma=(11.0, 13.0, 8.0, 4.0),
        spindle_rate_per_min=0.0, saccade_rate_per_min=8.0,
        clip_rate_per_min=0.08, movement_rate_per_min=0.2,
        hr_bpm=60.0, hr_jitter_bpm=5.0, rsa_depth=0.075),
}

_RECIPE_FIELDS = ("band_sigma", "spindle_rate_per_min", "saccade_rate_per_min",
                  "clip_rate_per_min", "movement_rate_per_min",
                  "hr_bpm", "hr_jitter_bpm", "rsa_depth")


def profile_differences(a: StageProfile, b: StageProfile) -> int:
    """Number of recipe fields on which two stage profiles differ."""
    return sum(1 for f in _RECIPE_FIELDS if getattr(a, f) != getattr(b, f))


def validate_profiles(profiles: dict[SleepStage, StageProfile]) -> None:
    """Each trainable stage needs a valid recipe, and every pair of
    recipes must differ on at least 3 fields, otherwise two stages would
    be indistinguishable by construction."""
    for stage in ADJACENT:
        if stage not in profiles:
            raise ValidationError(f"no profile for stage {stage.display}")
        profiles[stage].validate()
    stages = list(ADJACENT)
    for i, a in enumerate(stages):
        for b in stages[i + 1:]:
            n = profile_differences(profiles[a], profiles[b])
            if n < 3:
                raise ValidationError(
                    f"profiles for {a.display} and {b.display} differ on only {n} fields")


# --- hypnogram ---------------------------------------------------------------

@dataclass(frozen=True)
class Hypnogram:
    """True per-epoch stage sequence for one night."""

    stages: tuple[SleepStage, ...]

    def __len__(self) -> int:
        return len(self.stages)

    def counts(self) -> dict[SleepStage, int]:
        c = {s: 0 for s in ADJACENT}
        for s in self.stages:
            c[s] += 1
        return c

    def proportions(self) -> dict[SleepStage, float]:
        n = len(self.stages)
        return {s: c / n for s, c in self.counts().items()}

    def runs(self) -> list[tuple[SleepStage, int]]:
        out: list[tuple[SleepStage, int]] = []
        for s in self.stages:
            if out and out[-1][0] == s:
                out[-1] = (s, out[-1][1] + 1)
            else:
                out.append((s, 1))
        return out


def _walk(rng: np.random.Generator, n_epochs: int,
          target_mix: dict[SleepStage, float]) -> list[SleepStage]:
    seq = [SleepStage.WAKE]
    counts = {s: 0 for s in ADJACENT}
    counts[SleepStage.WAKE] = 1
    for i in range(1, n_epochs):
        cur = seq[-1]
        if rng.random() < P_STAY[cur]:
            nxt = cur
        else:
            nbrs = ADJACENT[cur]
            w = np.array([max(target_mix[s] - counts[s] / i, _STEER_FLOOR)
                          for s in nbrs])
            nxt = nbrs[int(rng.choice(len(nbrs), p=w / w.sum()))]
        seq.append(nxt)
        counts[nxt] += 1
    return seq


def generate_hypnogram(rng: np.random.Generator, n_epochs: int,
                       target_mix: dict[SleepStage, float] | None = None,
                       ) -> Hypnogram:
    """Markov walk over the stage adjacency graph, steered so that the
    night's stage shares drift toward target_mix. Nights long enough to
    carry a full architecture (>= 48 epochs) are redrawn until every
    stage appears at least 3 times; shorter nights take the first draw.
    """
    if n_epochs < 1:
        raise ValidationError("hypnogram needs at least one epoch")
    mix = dict(target_mix) if target_mix is not None else TARGET_MIX
    required = 3 if n_epochs >= 48 else 0
    for _ in range(24):
        seq = _walk(rng, n_epochs, mix)
        if required == 0 or min(sum(1 for s in seq if s == st)
                                for st in ADJACENT) >= required:
            return Hypnogram(tuple(seq))
    raise OssmmError(
        f"no {n_epochs}-epoch hypnogram reached {required} epochs per stage "
        "in 24 draws; stage dwell probabilities are miscalibrated")


# --- signal builders ---------------------------------------------------------

EOG_OFFSET = 512.0
PPG_OFFSET = 512.0
# broadband floor: its epoch-to-epoch lognormal spread smears crossing
# rates and spectral-edge readings across stages, so no single
# wideband summary separates the stages on its own
EOG_WHITE_SIGMA = 3.0
EOG_WHITE_JITTER_SIGMA = 0.5
EOG_NIGHT_GAIN_SIGMA = 0.08         # log-amplitude spread between nights
# per-band log-amplitude spread between epochs; alpha is kept tighter
# than the rest so it stays the most reliable stage contrast
EOG_BAND_JITTER_SIGMA = (0.40, 0.35, 0.22, 0.35)

SPINDLE_CARRIER_HZ = 14.0
SPINDLE_CARRIER_JITTER_HZ = 0.7
# burst amplitude rides on the epoch's own 11-16 Hz background so the
# relative-threshold detector sees a stable margin whatever the band
# jitter does; more than 3 bursts per epoch would lift the background
# median enough to mask the weakest of them
SPINDLE_AMP_FACTOR = (5.0, 6.5)
SPINDLE_MAX_PER_EPOCH = 3
SPINDLE_DUR_S = (1.3, 1.9)
SPINDLE_GAP_S = 2.2

SACCADE_AMP = (60.0, 110.0)
SACCADE_DUR_S = (0.20, 0.27)
SACCADE_GAP_S = 0.8

CLIP_DUR_S = (0.10, 0.20)
CLIP_GAP_S = 1.0

PPG_AMP = 110.0
PPG_AMP_JITTER = 0.12
PPG_NOISE_SIGMA = 5.0
RSA_DEPTH_JITTER_SIGMA = 0.35       # blurs beat-interval spread across stages
PPG_FUND = 0.85
PPG_HARM = 0.30
PPG_HARM_PHASE = 1.0
RESP_HZ = (0.12, 0.35)

GRAVITY_COUNTS = 8200.0
ACCEL_NOISE_SIGMA = 22.0
GYRO_NOISE_SIGMA = 28.0
MOVE_ACCEL_SIGMA = 1500.0
MOVE_GYRO_SIGMA = 2600.0
MOVE_DUR_S = (0.3, 0.8)
MOVE_GAP_S = 1.6

# synthesis band edges for the EOG mixture (delta starts above DC so the
# per-band normalization never divides by a near-constant component)
_SYNTH_BANDS = ((0.6, 4.0), (4.0, 8.0), (8.0, 13.0), (13.0, 30.0))

# epochs at a run boundary are usually rendered as a mixture of the two
# neighboring recipes while keeping the single-stage label, the way a
# scorer collapses a transitional window; this is what puts honest
# adjacent-stage confusion into the corpus
BLEND_PROB = 0.85
BLEND_FRAC = (0.25, 0.50)


def _blend_profiles(a: StageProfile, b: StageProfile, w: float) -> StageProfile:
    def lerp(x: float, y: float) -> float:
        return (1.0 - w) * x + w * y

    return StageProfile(
        a.stage,
        tuple(lerp(x, y) for x, y in zip(a.band_sigma, b.band_sigma)),
        lerp(a.spindle_rate_per_min, b.spindle_rate_per_min),
        lerp(a.saccade_rate_per_min, b.saccade_rate_per_min),
        lerp(a.clip_rate_per_min, b.clip_rate_per_min),
        lerp(a.movement_rate_per_min, b.movement_rate_per_min),
        lerp(a.hr_bpm, b.hr_bpm),
        lerp(a.hr_jitter_bpm, b.hr_jitter_bpm),
        lerp(a.rsa_depth, b.rsa_depth))


def _band_noise(rng: np.random.Generator, n: int, fs_hz: float,
                lo_hz: float, hi_hz: float, sigma: float) -> np.ndarray:
    """Gaussian noise confined to [lo_hz, hi_hz), rescaled so its sample
    standard deviation is exactly sigma."""
    if sigma <= 0.0:
        return np.zeros(n)
    df = fs_hz / n
    k0 = max(1, math.ceil(lo_hz / df))
    k1 = min(n // 2 + 1, math.ceil(hi_hz / df))
    if k1 <= k0:
        return np.zeros(n)
    spec = np.zeros(n // 2 + 1, dtype=np.complex128)
    spec[k0:k1] = rng.standard_normal(k1 - k0) + 1j * rng.standard_normal(k1 - k0)
    x = np.fft.irfft(spec, n)
    return x * (sigma / x.std())


def _place_events(rng: np.random.Generator, count: int,
                  dur_range: tuple[float, float], gap_s: float,
                  margin_s: float, span_s: float = EPOCH_S,
                  ) -> list[tuple[float, float]]:
    """(start_s, duration_s) pairs inside one epoch, starts at least
    gap_s apart so downstream event detectors never merge two injected
    events into one."""
    if count <= 0:
        return []
    durs = rng.uniform(dur_range[0], dur_range[1], count)
    hi = span_s - margin_s - durs.max()
    if hi <= margin_s:
        return []
    for _ in range(64):
        starts = np.sort(rng.uniform(margin_s, hi, count))
        if count == 1 or np.diff(starts).min() >= gap_s:
            return list(zip(starts.tolist(), durs.tolist()))
    # crowded epoch: fall back to an even deterministic spacing
    starts = margin_s + (hi - margin_s) * np.arange(count) / count
    return list(zip(starts.tolist(), durs.tolist()))


def _segment(start_s: float, dur_s: float, n: int) -> tuple[int, int]:
    i0 = int(round(start_s * FS_HZ))
    i1 = min(n, i0 + max(1, int(round(dur_s * FS_HZ))))
    return i0, i1


def _eog_epoch(rng: np.random.Generator, prof: StageProfile,
               night_gain: float) -> tuple[np.ndarray, dict]:
    n = SAMPLES_PER_EPOCH
    white = EOG_WHITE_SIGMA * math.exp(rng.normal(0.0, EOG_WHITE_JITTER_SIGMA))
    x = rng.normal(0.0, white, n)
    sigma_eff = []
    for (lo, hi), sigma, jit in zip(_SYNTH_BANDS, prof.band_sigma,
                                    EOG_BAND_JITTER_SIGMA):
        jitter = math.exp(rng.normal(0.0, jit))
        sigma_eff.append(sigma * night_gain * jitter)
        x += _band_noise(rng, n, FS_HZ, lo, hi, sigma_eff[-1])

    # background inside 11-16 Hz: the 11-13 Hz share of the alpha band
    # plus the 13-16 Hz share of the beta band
    bg_1116 = math.sqrt(sigma_eff[2] ** 2 * (2.0 / 5.0)
                        + sigma_eff[3] ** 2 * (3.0 / 17.0))
    spindles = _place_events(
        rng, min(SPINDLE_MAX_PER_EPOCH,
                 int(rng.poisson(prof.spindle_rate_per_min * EPOCH_S / 60.0))),
        SPINDLE_DUR_S, SPINDLE_GAP_S, margin_s=0.5)
    for start_s, dur_s in spindles:
        i0, i1 = _segment(start_s, dur_s, n)
        m = i1 - i0
        carrier = SPINDLE_CARRIER_HZ + rng.uniform(-SPINDLE_CARRIER_JITTER_HZ,
                                                   SPINDLE_CARRIER_JITTER_HZ)
        amp = rng.uniform(*SPINDLE_AMP_FACTOR) * bg_1116
        t = np.arange(m) / FS_HZ
        x[i0:i1] += amp * np.hanning(m) * np.sin(
            2.0 * np.pi * carrier * t + rng.uniform(0.0, 2.0 * np.pi))

    saccades = _place_events(
        rng, int(rng.poisson(prof.saccade_rate_per_min * EPOCH_S / 60.0)),
        SACCADE_DUR_S, SACCADE_GAP_S, margin_s=0.3)
    for start_s, dur_s in saccades:
        i0, i1 = _segment(start_s, dur_s, n)
        x[i0:i1] += rng.uniform(*SACCADE_AMP) * (1.0 if rng.random() < 0.5 else -1.0)

    clips = _place_events(
        rng, int(rng.poisson(prof.clip_rate_per_min * EPOCH_S / 60.0)),
        CLIP_DUR_S, CLIP_GAP_S, margin_s=0.3)

    counts = np.clip(np.rint(x + EOG_OFFSET), 0, 1023)
    for start_s, dur_s in clips:
        i0, i1 = _segment(start_s, dur_s, n)
        counts[i0:i1] = 1023.0 if rng.random() < 0.5 else 0.0

    events = {
        "spindle_count": len(spindles),
        "spindle_onsets_s": [round(s, 3) for s, _ in spindles],
        "saccade_count": len(saccades),
        "clip_count": len(clips),
    }
    return counts, events


def _ppg_epoch(rng: np.random.Generator, prof: StageProfile
               ) -> tuple[np.ndarray, float]:
    n = SAMPLES_PER_EPOCH
    bpm = float(np.clip(rng.normal(prof.hr_bpm, prof.hr_jitter_bpm), 42.0, 115.0))
    f0 = bpm / 60.0
    resp = rng.uniform(*RESP_HZ)
    phase0 = rng.uniform(0.0, 2.0 * np.pi)
    depth = prof.rsa_depth * math.exp(rng.normal(0.0, RSA_DEPTH_JITTER_SIGMA))
    t = np.arange(n) / FS_HZ
    inst = f0 * (1.0 + depth * np.sin(2.0 * np.pi * resp * t + phase0))
    phase = 2.0 * np.pi * np.cumsum(inst) / FS_HZ
    amp = PPG_AMP * math.exp(rng.normal(0.0, PPG_AMP_JITTER))
    x = amp * (PPG_FUND * np.sin(phase)
               + PPG_HARM * np.sin(2.0 * phase + PPG_HARM_PHASE))
    x += rng.normal(0.0, PPG_NOISE_SIGMA, n)
    return np.clip(np.rint(x + PPG_OFFSET), 0, 1023), bpm


def _imu_epoch(rng: np.random.Generator, prof: StageProfile,
               gravity: np.ndarray) -> tuple[list[np.ndarray], int]:
    n = SAMPLES_PER_EPOCH
    accel = [gravity[i] + rng.normal(0.0, ACCEL_NOISE_SIGMA, n) for i in range(3)]
    gyro = [rng.normal(0.0, GYRO_NOISE_SIGMA, n) for _ in range(3)]
    moves = _place_events(
        rng, int(rng.poisson(prof.movement_rate_per_min * EPOCH_S / 60.0)),
        MOVE_DUR_S, MOVE_GAP_S, margin_s=0.2)
    for start_s, dur_s in moves:
        i0, i1 = _segment(start_s, dur_s, n)
        w = np.hanning(i1 - i0)
        for axis in accel:
            axis[i0:i1] += w * rng.normal(0.0, MOVE_ACCEL_SIGMA, i1 - i0)
        for axis in gyro:
            axis[i0:i1] += w * rng.normal(0.0, MOVE_GYRO_SIGMA, i1 - i0)
    signed = [np.clip(np.rint(a), -32700, 32700) for a in accel + gyro]
    return signed, len(moves)


# --- night assembly ----------------------------------------------------------

@dataclass
class NightTruth:
    """Everything the generator knows about one night, for sidecars."""

    night_id: str
    head_cut_ms: int
    tail_cut_ms: int
    stages: list[str]
    not_detected_epochs: list[int]
    hr_bpm: list[float]
    spindle_counts: list[int]
    spindle_onsets_s: list[list[float]]
    saccade_counts: list[int]
    clip_counts: list[int]
    movement_counts: list[int]
    blend_partner: list[str | None] = field(default_factory=list)
    blend_frac: list[float] = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = {
            "night_id": self.night_id,
            "tool_version": __version__,
            "head_cut_ms": self.head_cut_ms,
            "tail_cut_ms": self.tail_cut_ms,
            "stages": self.stages,
            "not_detected_epochs": self.not_detected_epochs,
            "hr_bpm": self.hr_bpm,
            "spindle_counts": self.spindle_counts,
            "spindle_onsets_s": self.spindle_onsets_s,
            "saccade_counts": self.saccade_counts,
            "clip_counts": self.clip_counts,
            "movement_counts": self.movement_counts,
            "blend_partner": self.blend_partner,
            "blend_frac": self.blend_frac,
        }
        d.update(self.extra)
        return d


TRUTH_FILE = "truth.json"

DEFAULT_NIGHT_START = "2025-03-01T22:00:00Z"


def _generate_night_full(seed, duration_epochs: int,
                         profiles: dict[SleepStage, StageProfile] | None = None,
                         *, night_id: str = "night01",
                         start_utc: datetime | None = None,
                         head_cut_ms: int | None = None,
                         tail_cut_ms: int | None = None,
                         nd_epochs: tuple[int, ...] = (),
                         ) -> tuple[NightRecording, list[StageLabel], Hypnogram, NightTruth]:
    if duration_epochs < 10:
        raise ValidationError("a night needs at least 10 epochs")
    profiles = profiles if profiles is not None else DEFAULT_PROFILES
    validate_profiles(profiles)
    if start_utc is None:
        start_utc = parse_utc(DEFAULT_NIGHT_START)
    rng = np.random.default_rng(seed)

    hyp = generate_hypnogram(rng, duration_epochs)
    # trim a few seconds at both ends so the first and last labeled
    # windows hold fewer than 95% of their samples, like a radio link
    # that settles late and drops early
    if head_cut_ms is None:
        head_cut_ms = int(rng.integers(2, 6)) * 1000
    if tail_cut_ms is None:
        tail_cut_ms = int(rng.integers(2, 6)) * 1000
    if head_cut_ms % 1000 or tail_cut_ms % 1000:
        raise ValidationError("boundary cuts must be whole seconds")
    if not (0 < head_cut_ms < EPOCH_MS and 0 < tail_cut_ms < EPOCH_MS):
        raise ValidationError("boundary cuts must fall inside one epoch")
    for idx in nd_epochs:
        if not 0 <= idx < duration_epochs:
            raise ValidationError(f"dropout epoch index {idx} out of range")

    night_gain = math.exp(rng.normal(0.0, EOG_NIGHT_GAIN_SIGMA))
    g = rng.standard_normal(3)
    gravity = g / np.linalg.norm(g) * GRAVITY_COUNTS

    eog_parts, ppg_parts, imu_parts = [], [], []
    truth = NightTruth(night_id, head_cut_ms, tail_cut_ms,
                       [s.display for s in hyp.stages], sorted(nd_epochs),
                       [], [], [], [], [], [])
    seq = hyp.stages
    last = len(seq) - 1
    for k, stage in enumerate(seq):
        prof = profiles[stage]
        partner = None
        if k > 0 and seq[k - 1] != stage:
            partner = seq[k - 1]
        elif k < last and seq[k + 1] != stage:
            partner = seq[k + 1]
        frac = 0.0
        if partner is not None and rng.random() < BLEND_PROB:
            frac = rng.uniform(*BLEND_FRAC)
            prof = _blend_profiles(prof, profiles[partner], frac)
        truth.blend_partner.append(partner.display if frac > 0.0 else None)
        truth.blend_frac.append(round(frac, 3))
        eog, events = _eog_epoch(rng, prof, night_gain)
        ppg, bpm = _ppg_epoch(rng, prof)
        imu, n_moves = _imu_epoch(rng, prof, gravity)
        eog_parts.append(eog)
        ppg_parts.append(ppg)
        imu_parts.append(imu)
        truth.hr_bpm.append(round(bpm, 2))
        truth.spindle_counts.append(events["spindle_count"])
        truth.spindle_onsets_s.append(events["spindle_onsets_s"])
        truth.saccade_counts.append(events["saccade_count"])
        truth.clip_counts.append(events["clip_count"])
        truth.movement_counts.append(n_moves)

    head_n = head_cut_ms // 4
    tail_n = tail_cut_ms // 4
    eog = np.concatenate(eog_parts)[head_n:-tail_n]
    ppg = np.concatenate(ppg_parts)[head_n:-tail_n]
    imu = [np.concatenate([p[i] for p in imu_parts])[head_n:-tail_n]
           for i in range(6)]
    n = eog.size
    channels = {
        "eog": eog.astype(np.int32),
        "ppg": ppg.astype(np.int32),
    }
    for name, sig in zip(("ax", "ay", "az", "gx", "gy", "gz"), imu):
        channels[name] = encode_imu(sig.astype(np.int64)).astype(np.int32)
    frames = FrameBlock(np.arange(n, dtype=np.int64) * 4, channels)
    frames.validate()

    nd = set(nd_epochs)
    label_t0 = start_utc - timedelta(milliseconds=head_cut_ms)
    labels = [StageLabel(label_t0 + timedelta(milliseconds=k * EPOCH_MS),
                         SleepStage.NOT_DETECTED if k in nd else hyp.stages[k])
              for k in range(duration_epochs)]
    recording = NightRecording(night_id, start_utc, frames)
    return recording, labels, hyp, truth


def generate_night(seed, duration_epochs: int,
                   profiles: dict[SleepStage, StageProfile] | None = None,
                   *, night_id: str = "night01",
                   start_utc: datetime | None = None,
                   ) -> tuple[NightRecording, list[StageLabel], Hypnogram]:
    """One synthetic night: 250 Hz frames per the stage recipes, a
    Markov hypnogram, and labels that match the hypnogram exactly (the
    first and last windows are boundary-trimmed and will not qualify).
    Deterministic in seed.
    """
    rec, labels, hyp, _ = _generate_night_full(
        seed, duration_epochs, profiles, night_id=night_id, start_utc=start_utc)
    return rec, labels, hyp


# --- corpus ------------------------------------------------------------------

DEFAULT_EPOCH_RANGE = (96, 120)
N_TEST_NIGHTS = 3
ND_NIGHT_PROB = 0.5     # chance that a training night carries one dropout label

_CORPUS_BASE_START = "2025-03-01T21:30:00Z"


def _pick_test_positions(rng: np.random.Generator, n_nights: int) -> list[int]:
    # no two held-out nights adjacent in the chronological ordering
    for _ in range(1000):
        pos = sorted(rng.choice(n_nights, size=N_TEST_NIGHTS, replace=False).tolist())
        if all(b - a >= 2 for a, b in zip(pos, pos[1:])):
            return pos
    raise OssmmError(f"no non-adjacent test split found for {n_nights} nights")


def generate_corpus(out_dir: Path, seed: int, n_nights: int = 15,
                    epochs_range: tuple[int, int] = DEFAULT_EPOCH_RANGE,
                    profiles: dict[SleepStage, StageProfile] | None = None,
                    ) -> dict:
    """Write a full corpus under out_dir and return its manifest.

    Directory layout and file formats are exactly what load_corpus
    reads. Three non-consecutive nights are marked as the held-out test
    split; dropout labels only ever land in training nights. Each night
    is rendered from its own child seed, so content depends only on
    (seed, night index), not on generation order.
    """
    if n_nights < 5:
        raise ValidationError("a corpus needs at least 5 nights")
    if epochs_range[0] < 10 or epochs_range[1] < epochs_range[0]:
        raise ValidationError("bad epochs_range")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    root = np.random.SeedSequence(seed)
    header_ss, *night_ss = root.spawn(n_nights + 1)
    header = np.random.default_rng(header_ss)

    night_ids = [f"night{i + 1:02d}" for i in range(n_nights)]
    durations = header.integers(epochs_range[0], epochs_range[1] + 1,
                                n_nights).tolist()
    base = parse_utc(_CORPUS_BASE_START)
    starts = [base + timedelta(days=i, minutes=int(header.integers(0, 45)))
              for i in range(n_nights)]
    test_pos = _pick_test_positions(header, n_nights)
    test_ids = [night_ids[i] for i in test_pos]
    nd_plan: dict[str, tuple[int, ...]] = {}
    for i, nid in enumerate(night_ids):
        if i not in test_pos and header.random() < ND_NIGHT_PROB:
            nd_plan[nid] = (int(header.integers(1, durations[i] - 1)),)

    for i, nid in enumerate(night_ids):
        rec, labels, _, truth = _generate_night_full(
            night_ss[i], durations[i], profiles,
            night_id=nid, start_utc=starts[i],
            nd_epochs=nd_plan.get(nid, ()))
        truth.extra = {"corpus_seed": seed, "spawn_key": i}
        night_dir = out_dir / nid
        night_dir.mkdir(exist_ok=True)
        write_night_meta(night_dir / META_FILE, nid, rec.start_utc)
        write_frames_csv(night_dir / FRAMES_FILE, rec.frames)
        write_labels_json(night_dir / LABELS_FILE, labels)
        (night_dir / TRUTH_FILE).write_text(
            json.dumps(truth.to_dict(), indent=1) + "\n")

    manifest = {
        "format_name": "ossmm-corpus",
        "format_version": 1,
        "tool_version": __version__,
        "seed": seed,
        "n_nights": n_nights,
        "night_ids": night_ids,
        "epochs_per_night": durations,
        "split": {
            "train_nights": [nid for nid in night_ids if nid not in test_ids],
            "test_nights": test_ids,
        },
        "target_mix": {s.display: p for s, p in TARGET_MIX.items()},
    }
    (out_dir / MANIFEST_FILE).write_text(json.dumps(manifest, indent=1) + "\n")
    return manifest
