"""Online replay: assemble frames into epochs, classify each completed
window, and drive a vibration-trigger policy.

The assembler is a single-consumer state machine over a fixed 30 s
window grid. The grid is anchored at the first label window so a
replayed night chops frames into exactly the windows the offline
aligner produces; predictions then agree epoch-for-epoch by
construction, and the equivalence tests hold the two paths together.

The replay clock is data-driven (frame timestamps), never wall-clock;
pacing for live demos is the CLI's business.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import OutOfOrderFrameError, UnqualifiedEpochError, ValidationError
from .features import extract_epoch
from .model import (
    EPOCH_MS,
    QUALIFY_MIN_SAMPLES,
    FrameBlock,
    LabeledEpoch,
    NightRecording,
    SensorFrame,
    SleepStage,
    StageLabel,
)

VIBRATION_MS_DEFAULT = 2000


@dataclass
class StreamEpoch:
    """One completed 30 s window of streamed frames."""

    epoch_idx: int
    t0_ms: int
    frames: FrameBlock

    @property
    def sample_count(self) -> int:
        return len(self.frames)

    @property
    def count_qualified(self) -> bool:
        """Sample-count side of the qualification rule. The label side
        (a dropout label disqualifies too) needs the night's labels and
        is applied by the replay driver."""
        return self.sample_count >= QUALIFY_MIN_SAMPLES


class EpochAssembler:
    """Chops a non-decreasing frame stream into half-open 30 s windows
    [anchor + k*30000, anchor + (k+1)*30000).

    feed() returns a StreamEpoch exactly when a window completes, i.e.
    when the first frame at or past the window's end arrives; flush()
    hands out whatever is buffered at end of stream. Windows that never
    saw a frame are skipped entirely, so no two emitted epochs overlap
    and every emitted frame belongs to exactly one epoch.
    """

    def __init__(self, anchor_ms: int = 0):
        self.anchor_ms = int(anchor_ms)
        self._window: int | None = None       # index of the open window
        self._buffer: list[SensorFrame] = []
        self._last_t: int | None = None
        self.frames_fed = 0
        self.frames_emitted = 0
        self.frames_dropped = 0
        self.epochs_emitted = 0

    @property
    def frames_buffered(self) -> int:
        return len(self._buffer)

    @property
    def conserved(self) -> bool:
        return self.frames_fed == (self.frames_emitted + self.frames_dropped
                                   + len(self._buffer))

    def _emit(self) -> StreamEpoch:
        idx = self._window
        block = FrameBlock.from_rows(self._buffer)
        self.frames_emitted += len(self._buffer)
        self.epochs_emitted += 1
        self._buffer = []
        return StreamEpoch(idx, self.anchor_ms + idx * EPOCH_MS, block)

    def feed(self, frame: SensorFrame) -> StreamEpoch | None:
        if self._last_t is not None and frame.t_ms < self._last_t:
            raise OutOfOrderFrameError(
                f"frame at t={frame.t_ms} ms after one at t={self._last_t} ms")
        self._last_t = frame.t_ms
        self.frames_fed += 1
        if frame.t_ms < self.anchor_ms:
            self.frames_dropped += 1
            return None
        k = (frame.t_ms - self.anchor_ms) // EPOCH_MS
        out = None
        if self._window is None:
            self._window = k
        elif k > self._window:
            out = self._emit()
            self._window = k
        self._buffer.append(frame)
        return out

    def feed_block(self, block: FrameBlock):
        """Feed a whole block frame by frame, yielding completed epochs."""
        for frame in block.iter_frames():
            epoch = self.feed(frame)
            if epoch is not None:
                yield epoch

    def flush(self) -> StreamEpoch | None:
        """End of stream: emit the window in progress, if any."""
        if not self._buffer:
            return None
        return self._emit()


def classify_online(model, epoch: LabeledEpoch) -> SleepStage:
    """Classify one completed epoch with a trained model. Identical to
    the batch path: same extractor, same model, one row."""
    vec = extract_epoch(epoch)     # raises UnqualifiedEpochError when not analysable
    pred = model.predict(vec.values.reshape(1, -1))
    return SleepStage(int(pred[0]))


@dataclass
class TriggerEvent:
    """A motor-on command the policy decided to emit."""

    epoch_idx: int
    stage: SleepStage
    vibration_ms: int = VIBRATION_MS_DEFAULT


@dataclass
class ModulationPolicy:
    """Trigger after consecutive_required predictions of target_stage,
    then hold off for refractory_epochs. The streak counter is suspended
    during refractory, so triggers are at least consecutive_required +
    refractory_epochs epochs apart.
    """

    target_stage: SleepStage = SleepStage.REM
    consecutive_required: int = 2
    refractory_epochs: int = 10
    vibration_ms: int = VIBRATION_MS_DEFAULT
    _streak: int = field(default=0, repr=False)
    _refractory_left: int = field(default=0, repr=False)
    triggers_emitted: int = field(default=0, repr=False)

    def __post_init__(self):
        if self.consecutive_required < 1:
            raise ValidationError("consecutive_required must be >= 1")
        if self.refractory_epochs < 0:
            raise ValidationError("refractory_epochs must be >= 0")

    def step(self, epoch_idx: int, predicted: SleepStage) -> TriggerEvent | None:
        if self._refractory_left > 0:
            self._refractory_left -= 1
            return None
        if predicted == self.target_stage:
            self._streak += 1
        else:
            self._streak = 0
        if self._streak >= self.consecutive_required:
            self._streak = 0
            self._refractory_left = self.refractory_epochs
            self.triggers_emitted += 1
            return TriggerEvent(epoch_idx, predicted, self.vibration_ms)
        return None


@dataclass
class ReplayEvent:
    """Per-epoch outcome of a replayed night."""

    epoch_idx: int
    t0_ms: int
    sample_count: int
    qualified: bool
    stage: SleepStage | None              # prediction; None when skipped
    trigger: TriggerEvent | None

    def to_dict(self) -> dict:
        d = {
            "epoch": self.epoch_idx,
            "stage": self.stage.display if self.stage is not None else None,
            "qualified": self.qualified,
        }
        if self.trigger is not None:
            d["trigger"] = {"epoch": self.trigger.epoch_idx,
                            "vibration_ms": self.trigger.vibration_ms}
        return d


@dataclass
class ReplayResult:
    events: list[ReplayEvent]
    frames_fed: int
    frames_emitted: int
    frames_dropped: int

    @property
    def predictions(self) -> list[SleepStage]:
        return [e.stage for e in self.events if e.qualified]

    @property
    def triggers(self) -> list[TriggerEvent]:
        return [e.trigger for e in self.events if e.trigger is not None]


def replay(recording: NightRecording, labels: list[StageLabel], model,
           policy: ModulationPolicy | None = None) -> ReplayResult:
    """Stream a recorded night through the online path.

    The window grid is anchored at the first label so every emitted
    window matches its offline epoch; each completed window is married
    to its label, classified when qualified, and run through the policy.
    Windows past the label range cannot be scored and are reported
    unqualified.
    """
    if not labels:
        raise ValidationError(f"night {recording.night_id}: no labels to replay")
    delta = labels[0].start_utc - recording.start_utc
    anchor_ms = round(delta.total_seconds() * 1000.0)
    assembler = EpochAssembler(anchor_ms)
    events: list[ReplayEvent] = []

    def handle(se: StreamEpoch) -> None:
        label = labels[se.epoch_idx] if se.epoch_idx < len(labels) else None
        stage = None
        trigger = None
        qualified = False
        if label is not None:
            epoch = LabeledEpoch(
                night_id=recording.night_id, epoch_idx=se.epoch_idx,
                t0_ms=se.t0_ms, start_utc=label.start_utc,
                stage=label.stage, frames=se.frames)
            qualified = epoch.qualified
            if qualified:
                stage = classify_online(model, epoch)
                if policy is not None:
                    trigger = policy.step(se.epoch_idx, stage)
        events.append(ReplayEvent(se.epoch_idx, se.t0_ms, se.sample_count,
                                  qualified, stage, trigger))

    for se in assembler.feed_block(recording.frames):
        handle(se)
    tail = assembler.flush()
    if tail is not None:
        handle(tail)
    return ReplayResult(events, assembler.frames_fed,
                        assembler.frames_emitted, assembler.frames_dropped)
