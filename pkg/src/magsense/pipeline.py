"""End-to-end inference glue: smoothing -> trigger -> windows -> embedding -> vote.

Each frame inside a triggered event closes one 16-frame window (the frames
before onset provide the left context). With environmental subtraction on,
windows are offset by the background frozen at onset and scaled only; with
it off, the raw smoothed readings are normalized with the full profile.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import N_CHANNELS, WINDOW_LEN, GestureEvent, Recording
from .magdelta import (DEFAULT_HYSTERESIS_FRAMES, DEFAULT_MIN_EVENT_FRAMES, DEFAULT_THRESHOLD_UT,
                       Segment, TriggerState, segment_events, trigger_step)
from .preprocess import DEFAULT_ALPHA, CalibrationProfile, SmoothingState, normalize_array, smooth_array, smooth_step


@dataclass(frozen=True)
class PipelineConfig:
    alpha: float = DEFAULT_ALPHA
    threshold_uT: float = DEFAULT_THRESHOLD_UT
    min_event_frames: int = DEFAULT_MIN_EVENT_FRAMES
    hysteresis_frames: int = DEFAULT_HYSTERESIS_FRAMES
    magdelta: bool = True  # environmental subtraction; segmentation always runs
    profile: CalibrationProfile = field(default_factory=CalibrationProfile)


def window_ending_at(data: np.ndarray, i: int) -> np.ndarray:
    """Rows ``i-15 .. i``; the first row is repeated when the stream is shorter."""
    lo = i - WINDOW_LEN + 1
    if lo >= 0:
        return data[lo:i + 1]
    return np.vstack([np.repeat(data[:1], -lo, axis=0), data[:i + 1]])


def prepare_windows(smoothed: np.ndarray, seg: Segment, cfg: PipelineConfig) -> np.ndarray:
    """Normalized (n, 16, 9) windows, one ending at every frame of the event."""
    ws = np.stack([window_ending_at(smoothed, i) for i in range(seg.start_idx, seg.end_idx)])
    if cfg.magdelta:
        return normalize_array(ws - seg.env_estimate, cfg.profile.scale_only())
    return normalize_array(ws, cfg.profile)


def extract_events(rec: Recording | np.ndarray, cfg: PipelineConfig) -> list[tuple[Segment, np.ndarray]]:
    """Offline path: every event of a recording with its prepared windows."""
    data = rec.data if isinstance(rec, Recording) else np.asarray(rec, dtype=float)
    sm = smooth_array(data, cfg.alpha)
    segs = segment_events(sm, cfg.threshold_uT, cfg.min_event_frames, cfg.hysteresis_frames)
    return [(s, prepare_windows(sm, s, cfg)) for s in segs]


def main_event(events: list[tuple[Segment, np.ndarray]]) -> tuple[Segment, np.ndarray] | None:
    """The longest event; labelled corpora hold one gesture per recording."""
    if not events:
        return None
    return max(events, key=lambda e: e[0].end_idx - e[0].start_idx)


# predictor: (n, 16, 9) normalized windows -> (labels (n,), scores (n,))
WindowPredictor = Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]]


def vote(labels: np.ndarray, scores: np.ndarray) -> int:
    """Modal label; ties go to the larger summed score, then the lowest id."""
    labels = np.asarray(labels, dtype=int)
    scores = np.asarray(scores, dtype=float)
    if labels.size == 0:
        raise ValueError("cannot vote over zero windows")
    cands = np.unique(labels)
    counts = np.array([np.sum(labels == c) for c in cands])
    tied = cands[counts == counts.max()]
    if len(tied) == 1:
        return int(tied[0])
    sums = np.array([scores[labels == c].sum() for c in tied])
    # np.unique is sorted, so argmax breaks exact ties toward the lowest id
    return int(tied[int(np.argmax(sums))])


def event_from_windows(seg: Segment, windows: np.ndarray, predict: WindowPredictor) -> GestureEvent:
    labels, scores = predict(windows)
    return GestureEvent.from_votes(seg.start_idx, seg.end_idx, labels, vote(labels, scores))


def infer_recording(rec: Recording | np.ndarray, predict: WindowPredictor,
                    cfg: PipelineConfig) -> list[GestureEvent]:
    return [event_from_windows(s, w, predict) for s, w in extract_events(rec, cfg)]


class StreamingPipeline:
    """Sample-by-sample version of ``infer_recording``.

    ``push`` returns a finished GestureEvent when an event closes, else None.
    Each in-event frame is classified as it arrives, so per-sample latency
    includes one embedding and one prediction.
    """

    def __init__(self, predict: WindowPredictor, cfg: PipelineConfig):
        self.predict = predict
        self.cfg = cfg
        self._smooth = SmoothingState(cfg.alpha)
        self._trig = TriggerState(cfg.threshold_uT, cfg.hysteresis_frames)
        self._hist: list[np.ndarray] = []  # last 16 smoothed frames
        self._i = -1
        self._reset_event()

    def _reset_event(self) -> None:
        self._start = -1
        self._last = -1
        self._env: np.ndarray | None = None
        self._labels: list[int] = []
        self._scores: list[float] = []

    def _close(self) -> GestureEvent | None:
        n = self._last + 1 - self._start
        ev = None
        if self._start >= 0 and n >= self.cfg.min_event_frames:
            labels = np.array(self._labels[:n])
            scores = np.array(self._scores[:n])
            ev = GestureEvent.from_votes(self._start, self._last + 1, labels, vote(labels, scores))
        self._reset_event()
        return ev

    def push(self, frame: np.ndarray) -> GestureEvent | None:
        self._i += 1
        self._smooth, y = smooth_step(self._smooth, np.asarray(frame, dtype=float).reshape(N_CHANNELS))
        self._hist.append(y)
        if len(self._hist) > WINDOW_LEN:
            self._hist.pop(0)
        was_active = self._trig.active
        _, dec = trigger_step(self._trig, y)
        if dec.detected and not was_active:
            self._start = self._i
            self._env = dec.env_estimate.copy()
        if self._start >= 0 and self._trig.active:
            # classify every frame from onset; trailing sub-threshold frames are trimmed at close
            w = window_ending_at(np.array(self._hist), len(self._hist) - 1)[None]
            if self.cfg.magdelta:
                w = normalize_array(w - self._env, self.cfg.profile.scale_only())
            else:
                w = normalize_array(w, self.cfg.profile)
            lab, sc = self.predict(w)
            self._labels.append(int(lab[0]))
            self._scores.append(float(sc[0]))
        if dec.detected:
            self._last = self._i
        if was_active and not self._trig.active:
            return self._close()
        return None

    def flush(self) -> GestureEvent | None:
        """Close an event still open at the end of the stream."""
        if self._trig.active and self._start >= 0:
            return self._close()
        return None

    def run(self, data: np.ndarray) -> list[GestureEvent]:
        out = [ev for ev in (self.push(f) for f in np.asarray(data, dtype=float)) if ev is not None]
        tail = self.flush()
        return out + ([tail] if tail is not None else [])


def pretraining_contexts(recs, cfg: PipelineConfig, context_len: int = 32, stride: int = 4) -> np.ndarray:
    """Unlabelled recordings -> normalized (n, context_len, 9) training contexts.

    Every frame is offset by the trigger's running background estimate, the
    same quantity that is subtracted at inference time.
    """
    from .core import stack_windows
    from .magdelta import run_trigger

    out = []
    for rec in recs:
        data = rec.data if isinstance(rec, Recording) else np.asarray(rec, dtype=float)
        sm = smooth_array(data, cfg.alpha)
        if cfg.magdelta:
            _, _, env = run_trigger(sm, cfg.threshold_uT, cfg.hysteresis_frames)
            x = normalize_array(sm - env, cfg.profile.scale_only())
        else:
            x = normalize_array(sm, cfg.profile)
        out.append(stack_windows(x, context_len, stride))
    if not out:
        return np.zeros((0, context_len, N_CHANNELS))
    return np.concatenate(out)
