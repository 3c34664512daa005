"""Core domain types: stages, frames, nights, epochs, reports.

Everything downstream (ingest, features, ml, stream) is phrased in terms
of the types in this module. The conventions that matter:

* Sensor channels are raw ADC counts. EOG and PPG are 10-bit (0..1023).
  IMU axes are stored baseline-shifted into unsigned 16-bit (signed count
  + 32768); decoding back to signed happens at feature-extraction time.
* Time inside a night is integer milliseconds from the first frame of
  the recording; absolute time is UTC and only used to align labels.
* An epoch is 30 000 ms, half-open [t0, t0 + 30 000). It is *qualified*
  for analysis when it holds at least 95% of the nominal sample count
  (7125 of 7500 at 250 Hz) and its label is a real stage.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np

from .errors import UnknownLabelError, ValidationError

FS_HZ = 250.0
ADC_MAX = 1023
IMU_OFFSET = 32768
EPOCH_MS = 30_000
SAMPLES_PER_EPOCH = 7500          # EPOCH_MS / 1000 * FS_HZ
QUALIFY_MIN_SAMPLES = 7125        # ceil(0.95 * SAMPLES_PER_EPOCH)

CHANNELS = ("eog", "ppg", "ax", "ay", "az", "gx", "gy", "gz")
FRAME_COLUMNS = ("t_ms",) + CHANNELS


class SleepStage(enum.IntEnum):
    """Stage vocabulary. Trainable stages are numbered alphabetically so
    that class index order (Deep, Light, REM, Wake) is reproducible
    without an extra lookup table. NOT_DETECTED marks scorer dropouts
    and never enters a classifier.
    """

    DEEP = 0
    LIGHT = 1
    REM = 2
    WAKE = 3
    NOT_DETECTED = -1

    @property
    def display(self) -> str:
        return _STAGE_DISPLAY[self]


_STAGE_DISPLAY = {
    SleepStage.DEEP: "Deep",
    SleepStage.LIGHT: "Light",
    SleepStage.REM: "REM",
    SleepStage.WAKE: "Wake",
    SleepStage.NOT_DETECTED: "Not Detected",
}

CLASS_ORDER = (SleepStage.DEEP, SleepStage.LIGHT, SleepStage.REM, SleepStage.WAKE)
CLASS_NAMES = tuple(s.display for s in CLASS_ORDER)
N_CLASSES = len(CLASS_ORDER)

_LABEL_LOOKUP = {
    "deep": SleepStage.DEEP,
    "deep sleep": SleepStage.DEEP,
    "n3": SleepStage.DEEP,
    "light": SleepStage.LIGHT,
    "light sleep": SleepStage.LIGHT,
    "rem": SleepStage.REM,
    "rem sleep": SleepStage.REM,
    "wake": SleepStage.WAKE,
    "awake": SleepStage.WAKE,
    "not detected": SleepStage.NOT_DETECTED,
    "notdetected": SleepStage.NOT_DETECTED,
    "undetected": SleepStage.NOT_DETECTED,
}


def stage_from_label(text: str) -> SleepStage:
    """Map a free-form stage label to a SleepStage.

    Tolerant of case, surrounding whitespace, and separator choice
    ("Deep Sleep", "deep_sleep", " DEEP "). Raises UnknownLabelError for
    anything outside the vocabulary; silent coercion of a typo to a
    stage would corrupt training labels.
    """
    if not isinstance(text, str):
        raise UnknownLabelError(f"stage label must be a string, got {type(text).__name__}")
    key = re.sub(r"[\s_\-]+", " ", text.strip().lower())
    try:
        return _LABEL_LOOKUP[key]
    except KeyError:
        raise UnknownLabelError(f"unrecognized stage label: {text!r}") from None


def parse_utc(text: str) -> datetime:
    """Parse an ISO-8601 timestamp into an aware UTC datetime.

    Accepts a trailing 'Z' (datetime.fromisoformat on 3.10 does not) and
    naive timestamps, which are taken to be UTC already.
    """
    if text.endswith("Z") or text.endswith("z"):
        text = text[:-1] + "+00:00"
    try:
        dt = datetime.fromisoformat(text)
    except ValueError as exc:
        raise ValidationError(f"bad ISO-8601 timestamp: {text!r}") from exc
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc)


def format_utc(dt: datetime) -> str:
    """Render a UTC datetime as ISO-8601 with a 'Z' suffix (whole seconds)."""
    dt = dt.astimezone(timezone.utc)
    return dt.strftime("%Y-%m-%dT%H:%M:%SZ")


@dataclass(frozen=True)
class SensorFrame:
    """One 4 ms sample across all channels, raw counts."""

    t_ms: int
    eog: int
    ppg: int
    ax: int
    ay: int
    az: int
    gx: int
    gy: int
    gz: int

    def channel_values(self) -> tuple[int, ...]:
        return (self.eog, self.ppg, self.ax, self.ay, self.az,
                self.gx, self.gy, self.gz)


class FrameBlock:
    """Columnar frame storage: one int64 timestamp vector plus one int32
    count vector per channel. All per-epoch math slices these arrays, so
    frames are never materialized row-by-row except in the streaming
    tests.
    """

    __slots__ = ("t_ms", "channels")

    def __init__(self, t_ms: np.ndarray, channels: dict[str, np.ndarray]):
        self.t_ms = np.asarray(t_ms, dtype=np.int64)
        self.channels = {name: np.asarray(channels[name], dtype=np.int32)
                         for name in CHANNELS}
        n = self.t_ms.shape[0]
        for name, col in self.channels.items():
            if col.shape != (n,):
                raise ValidationError(
                    f"channel {name!r} has {col.shape[0]} samples, expected {n}")

    def __len__(self) -> int:
        return int(self.t_ms.shape[0])

    @classmethod
    def empty(cls) -> "FrameBlock":
        return cls(np.empty(0, dtype=np.int64),
                   {name: np.empty(0, dtype=np.int32) for name in CHANNELS})

    @classmethod
    def from_rows(cls, rows: list[SensorFrame]) -> "FrameBlock":
        t = np.array([r.t_ms for r in rows], dtype=np.int64)
        cols = {name: np.array([getattr(r, name) for r in rows], dtype=np.int32)
                for name in CHANNELS}
        return cls(t, cols)

    def validate(self) -> None:
        """Check the physical contract: strictly increasing time, EOG/PPG
        within 10-bit range, IMU within unsigned 16-bit range.
        """
        if len(self) > 1 and not np.all(np.diff(self.t_ms) > 0):
            bad = int(np.argmin(np.diff(self.t_ms) > 0))
            raise ValidationError(
                f"frame timestamps not strictly increasing near row {bad + 1}")
        for name in ("eog", "ppg"):
            col = self.channels[name]
            if len(col) and (col.min() < 0 or col.max() > ADC_MAX):
                raise ValidationError(f"{name} counts outside 0..{ADC_MAX}")
        for name in ("ax", "ay", "az", "gx", "gy", "gz"):
            col = self.channels[name]
            if len(col) and (col.min() < 0 or col.max() > 65535):
                raise ValidationError(f"{name} counts outside 0..65535")

    def slice_time(self, t0_ms: int, t1_ms: int) -> "FrameBlock":
        """Frames with t0_ms <= t < t1_ms (half-open, like epochs)."""
        lo = int(np.searchsorted(self.t_ms, t0_ms, side="left"))
        hi = int(np.searchsorted(self.t_ms, t1_ms, side="left"))
        return FrameBlock(self.t_ms[lo:hi],
                          {name: col[lo:hi] for name, col in self.channels.items()})

    def iter_frames(self):
        for i in range(len(self)):
            yield SensorFrame(
                int(self.t_ms[i]),
                *(int(self.channels[name][i]) for name in CHANNELS))

    def row(self, i: int) -> SensorFrame:
        return SensorFrame(
            int(self.t_ms[i]),
            *(int(self.channels[name][i]) for name in CHANNELS))


@dataclass
class NightRecording:
    """One continuous overnight recording plus its absolute start time."""

    night_id: str
    start_utc: datetime
    frames: FrameBlock
    fs_hz: float = FS_HZ

    @property
    def duration_ms(self) -> int:
        if len(self.frames) == 0:
            return 0
        return int(self.frames.t_ms[-1] - self.frames.t_ms[0]) + 4


@dataclass(frozen=True)
class StageLabel:
    """One scored 30 s window: absolute start time plus its stage."""

    start_utc: datetime
    stage: SleepStage


# exclusion tags used by alignment bookkeeping
EXCLUDE_SHORT = "short"
EXCLUDE_NOT_DETECTED = "not_detected"


@dataclass
class LabeledEpoch:
    """A 30 s window of frames married to a stage label.

    t0_ms is the epoch start expressed on the recording's own clock so
    offline epochs and streamed epochs can be matched exactly.
    exclusion is None when the epoch is analysable, otherwise one of
    EXCLUDE_SHORT / EXCLUDE_NOT_DETECTED (a dropout label wins over a
    short window when both apply, so each epoch is counted once).
    """

    night_id: str
    epoch_idx: int
    t0_ms: int
    start_utc: datetime
    stage: SleepStage
    frames: FrameBlock

    @property
    def sample_count(self) -> int:
        return len(self.frames)

    @property
    def exclusion(self) -> str | None:
        if self.stage == SleepStage.NOT_DETECTED:
            return EXCLUDE_NOT_DETECTED
        if self.sample_count < QUALIFY_MIN_SAMPLES:
            return EXCLUDE_SHORT
        return None

    @property
    def qualified(self) -> bool:
        return self.exclusion is None


def qualifies(sample_count: int, stage: SleepStage) -> bool:
    """The qualification rule in one place: >= 95% of nominal samples and
    a real stage label.
    """
    return sample_count >= QUALIFY_MIN_SAMPLES and stage != SleepStage.NOT_DETECTED


@dataclass
class IngestSummary:
    """Epoch bookkeeping for one night or an entire corpus.

    Always balances: labels_total = qualified + excluded_short +
    excluded_not_detected. merged() sums summaries so corpus totals come
    from per-night counts without re-reading anything.
    """

    nights: int = 0
    labels_total: int = 0
    qualified: int = 0
    excluded_short: int = 0
    excluded_not_detected: int = 0

    @property
    def books_balance(self) -> bool:
        return self.labels_total == (
            self.qualified + self.excluded_short + self.excluded_not_detected)

    @classmethod
    def merged(cls, parts: list["IngestSummary"]) -> "IngestSummary":
        total = cls()
        for p in parts:
            total.nights += p.nights
            total.labels_total += p.labels_total
            total.qualified += p.qualified
            total.excluded_short += p.excluded_short
            total.excluded_not_detected += p.excluded_not_detected
        return total

    def to_dict(self) -> dict:
        return {
            "nights": self.nights,
            "labels_total": self.labels_total,
            "qualified": self.qualified,
            "excluded_short": self.excluded_short,
            "excluded_not_detected": self.excluded_not_detected,
        }


@dataclass
class FeatureVector:
    """Extraction output for one qualified epoch."""

    night_id: str
    epoch_idx: int
    stage: SleepStage
    values: np.ndarray      # float64, one entry per catalog feature


@dataclass(frozen=True)
class DatasetSplit:
    """Which nights are held out for the final test evaluation."""

    train_nights: tuple[str, ...]
    test_nights: tuple[str, ...]

    def validate(self, night_order: list[str]) -> None:
        """night_order is the corpus's chronological night list. Checks
        the split covers it, is disjoint, and holds out non-consecutive
        nights (adjacent held-out nights would make the test set one
        long run and weaken independence).
        """
        train, test = set(self.train_nights), set(self.test_nights)
        if train & test:
            raise ValidationError(f"nights in both train and test: {sorted(train & test)}")
        if train | test != set(night_order):
            raise ValidationError("split does not cover the corpus night list exactly")
        pos = {nid: i for i, nid in enumerate(night_order)}
        held = sorted(pos[nid] for nid in self.test_nights)
        for a, b in zip(held, held[1:]):
            if b - a == 1:
                raise ValidationError(
                    f"held-out nights {night_order[a]} and {night_order[b]} are consecutive")


@dataclass
class EvaluationReport:
    """Per-model evaluation bundle. confusion is row-normalized over true
    classes (rows sum to 1 unless the class had no support, flagged in
    zero_support_classes); confusion_counts keeps the raw tallies.
    """

    class_order: tuple[str, ...]
    n_epochs: int
    accuracy: float
    macro_f1: float
    per_class_f1: dict[str, float]
    confusion_counts: list[list[int]]
    confusion: list[list[float]]
    zero_support_classes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "class_order": list(self.class_order),
            "n_epochs": self.n_epochs,
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "per_class_f1": dict(self.per_class_f1),
            "confusion_counts": [list(r) for r in self.confusion_counts],
            "confusion": [list(r) for r in self.confusion],
            "zero_support_classes": list(self.zero_support_classes),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvaluationReport":
        return cls(
            class_order=tuple(d["class_order"]),
            n_epochs=int(d["n_epochs"]),
            accuracy=float(d["accuracy"]),
            macro_f1=float(d["macro_f1"]),
            per_class_f1={k: float(v) for k, v in d["per_class_f1"].items()},
            confusion_counts=[[int(x) for x in r] for r in d["confusion_counts"]],
            confusion=[[float(x) for x in r] for r in d["confusion"]],
            zero_support_classes=list(d.get("zero_support_classes", [])),
        )
