"""MagDelta: training-free nearby-magnet trigger.

A uniform field (Earth, persistent sources) adds the same vector to every
sensor, so it cancels in sensor-to-sensor differences. A nearby magnet has a
steep gradient and makes the sensors disagree. The trigger fires when any
pair of sensors differs by more than a threshold (Euclidean norm, uT).

While no magnet is present, the last 16 frames are kept in a queue; the
oldest one is the environmental-field estimate. The queue stops updating
while an event is active so the magnet cannot leak into the estimate.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .core import N_CHANNELS, Recording, SampleFrame, Window

DEFAULT_THRESHOLD_UT = 18.0
QUEUE_LEN = 16
DEFAULT_MIN_EVENT_FRAMES = 4
DEFAULT_HYSTERESIS_FRAMES = 3
MIN_QUIET_S = 5.0


def pair_delta_array(readings: np.ndarray) -> np.ndarray:
    """Max pairwise sensor difference for readings shaped (..., S, 3) or (..., 9)."""
    r = np.asarray(readings, dtype=float)
    if r.shape[-1] == N_CHANNELS:
        r = r.reshape(r.shape[:-1] + (-1, 3))
    if r.shape[-2] < 2:
        raise ValueError("pair delta needs at least two sensors")
    diff = r[..., :, None, :] - r[..., None, :, :]
    return np.linalg.norm(diff, axis=-1).max(axis=(-1, -2))


def pair_delta(frame: SampleFrame | np.ndarray) -> float:
    readings = frame.readings if isinstance(frame, SampleFrame) else np.asarray(frame).reshape(-1, 3)
    return float(pair_delta_array(readings))


class TriggerDecision(NamedTuple):
    detected: bool
    max_pair_delta_uT: float
    env_estimate: np.ndarray


@dataclass
class TriggerState:
    threshold_uT: float = DEFAULT_THRESHOLD_UT
    hysteresis_frames: int = DEFAULT_HYSTERESIS_FRAMES
    freeze_queue: bool = True
    queue: deque = field(default_factory=lambda: deque(maxlen=QUEUE_LEN))
    active: bool = False
    below_count: int = 0
    frozen_env: np.ndarray | None = None

    def __post_init__(self) -> None:
        if not self.threshold_uT > 0:
            raise ValueError("threshold_uT must be positive")
        if self.queue.maxlen != QUEUE_LEN:
            raise ValueError(f"queue capacity must be {QUEUE_LEN}")

    @property
    def env_estimate(self) -> np.ndarray | None:
        if self.active and self.frozen_env is not None:
            return self.frozen_env
        return self.queue[0] if self.queue else None


def trigger_step(state: TriggerState, frame: SampleFrame | np.ndarray) -> tuple[TriggerState, TriggerDecision]:
    """Advance the trigger by one frame. ``state`` is updated in place and returned."""
    y = frame.flat if isinstance(frame, SampleFrame) else np.asarray(frame, dtype=float).reshape(N_CHANNELS)
    delta = float(pair_delta_array(y.reshape(-1, 3)))
    detected = delta > state.threshold_uT
    if detected:
        if not state.active:
            # onset: snapshot the oldest pre-event frame
            state.frozen_env = state.queue[0].copy() if state.queue else y.copy()
            state.active = True
        state.below_count = 0
    elif state.active:
        state.below_count += 1
        if state.below_count >= state.hysteresis_frames:
            state.active = False
            state.below_count = 0
    frozen = state.freeze_queue and state.active
    if not detected and not frozen:
        state.queue.append(y.copy())
    env = state.env_estimate
    if env is None:
        env = y.copy()
    return state, TriggerDecision(detected, delta, env)


class Segment(NamedTuple):
    start_idx: int
    end_idx: int
    env_estimate: np.ndarray


def run_trigger(data: np.ndarray, threshold_uT: float = DEFAULT_THRESHOLD_UT,
                hysteresis_frames: int = DEFAULT_HYSTERESIS_FRAMES,
                freeze_queue: bool = True) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Run the trigger over an (N, 9) stream.

    Returns per-frame ``detected`` (N,), ``active`` (N,) and the per-frame
    environmental estimate (N, 9).
    """
    data = np.asarray(data, dtype=float)
    state = TriggerState(threshold_uT, hysteresis_frames, freeze_queue)
    n = len(data)
    detected = np.zeros(n, bool)
    active = np.zeros(n, bool)
    env = np.zeros((n, N_CHANNELS))
    for i in range(n):
        _, dec = trigger_step(state, data[i])
        detected[i] = dec.detected
        active[i] = state.active
        env[i] = dec.env_estimate
    return detected, active, env


def segment_events(rec: Recording | np.ndarray, threshold_uT: float = DEFAULT_THRESHOLD_UT,
                   min_event_frames: int = DEFAULT_MIN_EVENT_FRAMES,
                   hysteresis_frames: int = DEFAULT_HYSTERESIS_FRAMES,
                   freeze_queue: bool = True) -> list[Segment]:
    """Detected runs as [start, end) frame spans with the background frozen at onset.

    Gaps shorter than ``hysteresis_frames`` are bridged. A run still open when
    the stream ends is closed at its last detected frame.
    """
    data = rec.data if isinstance(rec, Recording) else np.asarray(rec, dtype=float)
    state = TriggerState(threshold_uT, hysteresis_frames, freeze_queue)
    events: list[Segment] = []
    start = last = -1
    env_at_onset = None
    for i in range(len(data)):
        was_active = state.active
        _, dec = trigger_step(state, data[i])
        if dec.detected:
            if not was_active:
                start = i
                env_at_onset = dec.env_estimate.copy()
            last = i
        if was_active and not state.active:
            if last + 1 - start >= min_event_frames:
                events.append(Segment(start, last + 1, env_at_onset))
            start = last = -1
    if state.active and start >= 0 and last + 1 - start >= min_event_frames:
        events.append(Segment(start, last + 1, env_at_onset))
    return events


def subtract_env(w: Window, env_estimate: np.ndarray) -> Window:
    env = np.asarray(env_estimate, dtype=float).reshape(N_CHANNELS)
    if not np.all(np.isfinite(env)):
        raise ValueError("env_estimate must be finite")
    return Window(w.data - env, w.origin)


def smoothing_warmup(alpha: float, residual: float = 0.01) -> int:
    """Frames until (1 - alpha)^n falls below ``residual``."""
    return int(np.ceil(np.log(residual) / np.log(1.0 - alpha)))


def calibrate_threshold(quiet_rec: Recording, safety_factor: float = 3.0, floor_uT: float = 1.0,
                        smoothing_alpha: float | None = None, min_duration_s: float = MIN_QUIET_S) -> float:
    """Threshold from a magnet-free recording: largest pair delta times a safety factor.

    Pass ``smoothing_alpha`` when the live pipeline smooths before triggering,
    so the calibration sees the same noise level. The filter warm-up (until the
    seed sample's weight drops below 1 %) is skipped because the first output
    carries unsmoothed noise.
    """
    if quiet_rec.duration_s < min_duration_s - 1e-9:
        raise ValueError(f"need at least {min_duration_s:g} s of quiet data, got {quiet_rec.duration_s:.2f} s")
    data = quiet_rec.data
    if smoothing_alpha is not None:
        from .preprocess import smooth_array

        data = smooth_array(data, smoothing_alpha)[smoothing_warmup(smoothing_alpha):]
    peak = float(pair_delta_array(data).max()) if len(data) else 0.0
    return max(peak * safety_factor, floor_uT)
