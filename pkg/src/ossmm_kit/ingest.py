"""Night loading and label alignment.

On-disk layout of a corpus:

    corpus_dir/
        corpus.manifest.json        (optional: split, generator settings)
        <night_id>/
            frames.csv              t_ms,eog,ppg,ax,ay,az,gx,gy,gz
            labels.json             [{"start": ISO-8601, "stage": str}, ...]
            night.meta.json         {"night_id": str, "start_utc": ISO-8601}

frames.csv timestamps are integer milliseconds on the recording's own
clock, where t_ms = 0 coincides with meta start_utc. Labels carry
absolute times and are mapped onto that clock during alignment, so a
recording that starts late simply has negative-offset label windows
with few or no frames in them.

Writers live next to readers so the synthesizer and the CLI share one
definition of every format.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import (
    DuplicateNightError,
    MalformedRowError,
    MissingInputError,
    NoOverlapError,
    NonMonotonicLabelError,
    NonMonotonicTimestampError,
    ValidationError,
    WrongHeaderError,
)
from .model import (
    ADC_MAX,
    CHANNELS,
    EPOCH_MS,
    FRAME_COLUMNS,
    IMU_OFFSET,
    FrameBlock,
    IngestSummary,
    LabeledEpoch,
    NightRecording,
    StageLabel,
    format_utc,
    parse_utc,
    stage_from_label,
)

FRAMES_FILE = "frames.csv"
LABELS_FILE = "labels.json"
META_FILE = "night.meta.json"
MANIFEST_FILE = "corpus.manifest.json"


def decode_imu(raw: np.ndarray) -> np.ndarray:
    """Unsigned baseline-shifted counts back to signed counts."""
    return np.asarray(raw, dtype=np.int64) - IMU_OFFSET


def encode_imu(signed: np.ndarray) -> np.ndarray:
    signed = np.asarray(signed, dtype=np.int64)
    if signed.size and (signed.min() < -IMU_OFFSET or signed.max() > IMU_OFFSET - 1):
        raise ValidationError("signed IMU counts outside the 16-bit range")
    return signed + IMU_OFFSET


# --- frames ----------------------------------------------------------------

def read_frames_csv(path: Path) -> FrameBlock:
    """Strict reader: exact header, integer cells, strictly increasing
    timestamps, channel values inside their physical ranges.
    """
    path = Path(path)
    if not path.is_file():
        raise MissingInputError(f"frames file not found: {path}")
    try:
        df = pd.read_csv(path, dtype={c: np.int64 for c in FRAME_COLUMNS})
    except ValueError as exc:
        # pandas raises ValueError both for non-integer cells and for
        # unknown dtype keys when the header is wrong; disambiguate below
        try:
            header = pd.read_csv(path, nrows=0).columns.tolist()
        except Exception:
            raise WrongHeaderError(f"{path}: unreadable header") from exc
        if tuple(header) != FRAME_COLUMNS:
            raise WrongHeaderError(
                f"{path}: header {header} != expected {list(FRAME_COLUMNS)}") from exc
        raise MalformedRowError(f"{path}: non-integer cell ({exc})") from exc
    except pd.errors.EmptyDataError as exc:
        raise WrongHeaderError(f"{path}: empty file, no header") from exc
    if tuple(df.columns) != FRAME_COLUMNS:
        raise WrongHeaderError(
            f"{path}: header {df.columns.tolist()} != expected {list(FRAME_COLUMNS)}")
    t = df["t_ms"].to_numpy(dtype=np.int64)
    if t.size > 1 and not np.all(np.diff(t) > 0):
        bad = int(np.argmax(np.diff(t) <= 0))
        raise NonMonotonicTimestampError(
            f"{path}: t_ms not strictly increasing at data row {bad + 1}")
    for name in ("eog", "ppg"):
        col = df[name].to_numpy()
        if col.size and (col.min() < 0 or col.max() > ADC_MAX):
            raise MalformedRowError(f"{path}: {name} value outside 0..{ADC_MAX}")
    for name in ("ax", "ay", "az", "gx", "gy", "gz"):
        col = df[name].to_numpy()
        if col.size and (col.min() < 0 or col.max() > 2 * IMU_OFFSET - 1):
            raise MalformedRowError(f"{path}: {name} value outside 0..65535")
    return FrameBlock(t, {name: df[name].to_numpy(dtype=np.int32)
                          for name in CHANNELS})


def write_frames_csv(path: Path, block: FrameBlock) -> None:
    df = pd.DataFrame({"t_ms": block.t_ms})
    for name in CHANNELS:
        df[name] = block.channels[name]
    df.to_csv(path, index=False, lineterminator="\n")


# --- labels ----------------------------------------------------------------

def read_labels_json(path: Path) -> list[StageLabel]:
    path = Path(path)
    if not path.is_file():
        raise MissingInputError(f"labels file not found: {path}")
    try:
        items = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(items, list):
        raise ValidationError(f"{path}: top level must be a JSON array")
    labels: list[StageLabel] = []
    prev: datetime | None = None
    for i, item in enumerate(items):
        if not isinstance(item, dict) or "start" not in item or "stage" not in item:
            raise ValidationError(f"{path}: entry {i} needs 'start' and 'stage'")
        start = parse_utc(item["start"])
        if prev is not None and start <= prev:
            raise NonMonotonicLabelError(
                f"{path}: label starts not strictly increasing at entry {i}")
        prev = start
        labels.append(StageLabel(start, stage_from_label(item["stage"])))
    return labels


def write_labels_json(path: Path, labels: list[StageLabel]) -> None:
    items = [{"start": format_utc(lab.start_utc), "stage": lab.stage.display}
             for lab in labels]
    Path(path).write_text(json.dumps(items, indent=1) + "\n")


# --- night meta ------------------------------------------------------------

def read_night_meta(path: Path) -> tuple[str, datetime]:
    path = Path(path)
    if not path.is_file():
        raise MissingInputError(f"night meta file not found: {path}")
    try:
        meta = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(meta, dict) or "night_id" not in meta or "start_utc" not in meta:
        raise ValidationError(f"{path}: needs 'night_id' and 'start_utc'")
    night_id = meta["night_id"]
    if not isinstance(night_id, str) or not night_id:
        raise ValidationError(f"{path}: night_id must be a non-empty string")
    return night_id, parse_utc(meta["start_utc"])


def write_night_meta(path: Path, night_id: str, start_utc: datetime) -> None:
    Path(path).write_text(json.dumps(
        {"night_id": night_id, "start_utc": format_utc(start_utc)}, indent=1) + "\n")


# --- nights and corpora ----------------------------------------------------

def load_night(night_dir: Path) -> tuple[NightRecording, list[StageLabel]]:
    night_dir = Path(night_dir)
    if not night_dir.is_dir():
        raise MissingInputError(f"night directory not found: {night_dir}")
    night_id, start_utc = read_night_meta(night_dir / META_FILE)
    frames = read_frames_csv(night_dir / FRAMES_FILE)
    labels = read_labels_json(night_dir / LABELS_FILE)
    return NightRecording(night_id, start_utc, frames), labels


@dataclass
class CorpusNight:
    """Directory handle plus the cheap metadata; frames load on demand."""

    night_id: str
    start_utc: datetime
    path: Path

    def load(self) -> tuple[NightRecording, list[StageLabel]]:
        return load_night(self.path)


@dataclass
class Corpus:
    root: Path
    nights: list[CorpusNight]           # chronological by start_utc
    manifest: dict | None

    @property
    def night_ids(self) -> list[str]:
        return [n.night_id for n in self.nights]

    def night(self, night_id: str) -> CorpusNight:
        for n in self.nights:
            if n.night_id == night_id:
                return n
        raise MissingInputError(f"night {night_id!r} not in corpus {self.root}")


def load_corpus(root: Path) -> Corpus:
    """Scan a corpus directory. Nights are any subdirectories holding a
    night.meta.json; they are ordered chronologically, which is the
    ordering 'consecutive nights' refers to everywhere else.
    """
    root = Path(root)
    if not root.is_dir():
        raise MissingInputError(f"corpus directory not found: {root}")
    nights: list[CorpusNight] = []
    seen: dict[str, Path] = {}
    for sub in sorted(root.iterdir()):
        if not sub.is_dir() or not (sub / META_FILE).is_file():
            continue
        night_id, start_utc = read_night_meta(sub / META_FILE)
        if night_id in seen:
            raise DuplicateNightError(
                f"night id {night_id!r} appears in both {seen[night_id]} and {sub}")
        seen[night_id] = sub
        nights.append(CorpusNight(night_id, start_utc, sub))
    if not nights:
        raise MissingInputError(f"no nights found under {root}")
    nights.sort(key=lambda n: (n.start_utc, n.night_id))
    manifest = None
    mpath = root / MANIFEST_FILE
    if mpath.is_file():
        manifest = json.loads(mpath.read_text())
    return Corpus(root, nights, manifest)


# --- alignment -------------------------------------------------------------

def align(recording: NightRecording, labels: list[StageLabel]
          ) -> tuple[list[LabeledEpoch], IngestSummary]:
    """Marry each 30 s label window to the frames it covers.

    Every label yields exactly one LabeledEpoch (possibly with zero
    frames) so in the summary labels_total always equals qualified +
    excluded_short + excluded_not_detected. Raises NoOverlapError when
    no label window intersects the recording at all, which almost
    always means the meta start_utc is wrong.
    """
    if not labels:
        raise ValidationError(f"night {recording.night_id}: no labels to align")
    epochs: list[LabeledEpoch] = []
    summary = IngestSummary(nights=1)
    frames = recording.frames
    t_lo = int(frames.t_ms[0]) if len(frames) else 0
    t_hi = int(frames.t_ms[-1]) if len(frames) else -1
    any_overlap = False
    for idx, lab in enumerate(labels):
        delta = lab.start_utc - recording.start_utc
        t0 = round(delta.total_seconds() * 1000.0)
        if len(frames) and t0 < t_hi + 1 and t0 + EPOCH_MS > t_lo:
            any_overlap = True
        epoch = LabeledEpoch(
            night_id=recording.night_id,
            epoch_idx=idx,
            t0_ms=t0,
            start_utc=lab.start_utc,
            stage=lab.stage,
            frames=frames.slice_time(t0, t0 + EPOCH_MS),
        )
        epochs.append(epoch)
        summary.labels_total += 1
        if epoch.exclusion is None:
            summary.qualified += 1
        elif epoch.exclusion == "not_detected":
            summary.excluded_not_detected += 1
        else:
            summary.excluded_short += 1
    if not any_overlap:
        raise NoOverlapError(
            f"night {recording.night_id}: labels and frames share no time span")
    return epochs, summary


def census(corpus: Corpus) -> tuple[dict[str, IngestSummary], IngestSummary]:
    """Align every night and return (per-night summaries, corpus total)."""
    per_night: dict[str, IngestSummary] = {}
    for cn in corpus.nights:
        recording, labels = cn.load()
        _, summary = align(recording, labels)
        per_night[cn.night_id] = summary
    return per_night, IngestSummary.merged(list(per_night.values()))
