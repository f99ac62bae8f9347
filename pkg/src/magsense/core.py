"""Shared domain types and the recording CSV format.

All field values are microtesla. A frame is a 3x3 block (sensor x axis); on
disk and in arrays it is flattened row-major to 9 columns in the order
``s0x,s0y,s0z,s1x,...,s2z``.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

WINDOW_LEN = 16
N_SENSORS = 3
N_CHANNELS = 9
DEFAULT_RATE_HZ = 17.0
CSV_HEADER = "t_ms,s0x,s0y,s0z,s1x,s1y,s1z,s2x,s2y,s2z"


class RecordingFormatError(ValueError):
    """A recording file could not be parsed."""


class RecordingValidationError(ValueError):
    """A recording violates a type invariant."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SampleFrame:
    timestamp_ms: int
    readings: np.ndarray  # (3, 3) sensor x axis

    def __post_init__(self) -> None:
        r = np.asarray(self.readings, dtype=float)
        if r.shape != (N_SENSORS, 3):
            raise RecordingValidationError(f"frame readings must be 3x3, got {r.shape}")
        if not np.all(np.isfinite(r)):
            raise RecordingValidationError("frame readings must be finite")
        object.__setattr__(self, "readings", _frozen(r))
        object.__setattr__(self, "timestamp_ms", int(self.timestamp_ms))

    @property
    def flat(self) -> np.ndarray:
        return self.readings.reshape(N_CHANNELS)


@dataclass(frozen=True, eq=False)
class Recording:
    """An ordered stream of frames.

    Stored column-wise: ``t_ms`` is an (N,) int64 array and ``data`` an (N, 9)
    float array. Both are read-only after construction.
    """

    t_ms: np.ndarray
    data: np.ndarray
    sample_rate_hz: float = DEFAULT_RATE_HZ
    meta: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        t = np.asarray(self.t_ms)
        if t.size and not np.issubdtype(t.dtype, np.integer):
            if not np.all(t == np.round(t)):
                raise RecordingValidationError("timestamps must be integer milliseconds")
        t = t.astype(np.int64).reshape(-1)
        d = np.asarray(self.data, dtype=float).reshape(-1, N_CHANNELS) if np.size(self.data) else np.zeros((0, N_CHANNELS))
        if d.shape[0] != t.shape[0]:
            raise RecordingValidationError(f"{t.shape[0]} timestamps but {d.shape[0]} frames")
        if not np.all(np.isfinite(d)):
            raise RecordingValidationError("all readings must be finite")
        if not self.sample_rate_hz > 0:
            raise RecordingValidationError("sample_rate_hz must be positive")
        if t.size > 1:
            dt = np.diff(t)
            if np.any(dt <= 0):
                bad = int(np.argmax(dt <= 0)) + 1
                raise RecordingValidationError(f"timestamps not strictly increasing at frame {bad}")
            nominal = 1000.0 / self.sample_rate_hz
            med = float(np.median(dt))
            if abs(med - nominal) > 0.2 * nominal:
                raise RecordingValidationError(
                    f"median frame interval {med:.1f} ms is not within 20% of {nominal:.1f} ms"
                )
        object.__setattr__(self, "t_ms", _frozen(t))
        object.__setattr__(self, "data", _frozen(d))
        object.__setattr__(self, "sample_rate_hz", float(self.sample_rate_hz))
        object.__setattr__(self, "meta", {str(k): str(v) for k, v in dict(self.meta).items()})

    @classmethod
    def from_frames(cls, frames: Sequence[SampleFrame], sample_rate_hz: float = DEFAULT_RATE_HZ,
                    meta: Mapping[str, str] | None = None) -> "Recording":
        t = np.array([f.timestamp_ms for f in frames], dtype=np.int64)
        d = np.array([f.flat for f in frames]).reshape(-1, N_CHANNELS)
        return cls(t, d, sample_rate_hz, meta or {})

    @classmethod
    def from_array(cls, data: np.ndarray, sample_rate_hz: float = DEFAULT_RATE_HZ,
                   meta: Mapping[str, str] | None = None, t0_ms: int = 0) -> "Recording":
        """Build a recording with timestamps on the nominal sampling grid."""
        n = len(data)
        t = t0_ms + np.round(np.arange(n) * 1000.0 / sample_rate_hz).astype(np.int64)
        return cls(t, data, sample_rate_hz, meta or {})

    def __len__(self) -> int:
        return int(self.t_ms.shape[0])

    def __iter__(self) -> Iterator[SampleFrame]:
        return iter(self.frames)

    @property
    def frames(self) -> list[SampleFrame]:
        return [SampleFrame(int(t), d.reshape(N_SENSORS, 3)) for t, d in zip(self.t_ms, self.data)]

    @property
    def duration_s(self) -> float:
        return len(self) / self.sample_rate_hz

    def with_data(self, data: np.ndarray) -> "Recording":
        return Recording(self.t_ms, data, self.sample_rate_hz, self.meta)

    def with_meta(self, **kv: object) -> "Recording":
        meta = dict(self.meta)
        meta.update({k: str(v) for k, v in kv.items()})
        return Recording(self.t_ms, self.data, self.sample_rate_hz, meta)

    def equals(self, other: "Recording", decimals: int | None = None) -> bool:
        if len(self) != len(other) or not np.array_equal(self.t_ms, other.t_ms):
            return False
        if decimals is None:
            return bool(np.array_equal(self.data, other.data))
        return bool(np.allclose(self.data, other.data, atol=0.5 * 10.0 ** -decimals + 1e-12))


@dataclass(frozen=True, eq=False)
class Window:
    data: np.ndarray  # (16, 9)
    origin: int = 0

    def __post_init__(self) -> None:
        d = np.asarray(self.data, dtype=float)
        if d.shape != (WINDOW_LEN, N_CHANNELS):
            raise ValueError(f"window must be {WINDOW_LEN}x{N_CHANNELS}, got {d.shape}")
        object.__setattr__(self, "data", _frozen(d))
        object.__setattr__(self, "origin", int(self.origin))


@dataclass(frozen=True)
class GestureEvent:
    start_idx: int
    end_idx: int
    window_labels: tuple[int, ...]
    voted_label: int
    confidence: float

    def __post_init__(self) -> None:
        labels = tuple(int(x) for x in self.window_labels)
        object.__setattr__(self, "window_labels", labels)
        if self.end_idx <= self.start_idx:
            raise ValueError("end_idx must exceed start_idx")
        if self.voted_label not in labels:
            raise ValueError("voted_label must appear in window_labels")
        expected = labels.count(self.voted_label) / len(labels)
        if not np.isclose(self.confidence, expected, rtol=0, atol=1e-12):
            raise ValueError(f"confidence {self.confidence} != {expected}")

    @classmethod
    def from_votes(cls, start_idx: int, end_idx: int, window_labels: Sequence[int],
                   voted_label: int) -> "GestureEvent":
        labels = tuple(int(x) for x in window_labels)
        return cls(start_idx, end_idx, labels, int(voted_label), labels.count(int(voted_label)) / len(labels))

    def to_json(self) -> str:
        return json.dumps({
            "start_idx": self.start_idx,
            "end_idx": self.end_idx,
            "voted_label": self.voted_label,
            "confidence": self.confidence,
            "window_labels": list(self.window_labels),
        })

    @classmethod
    def from_json(cls, line: str) -> "GestureEvent":
        obj = json.loads(line)
        return cls(int(obj["start_idx"]), int(obj["end_idx"]), tuple(obj["window_labels"]),
                   int(obj["voted_label"]), float(obj["confidence"]))


# --- recording CSV ---------------------------------------------------------

def read_recording(path: str | os.PathLike) -> Recording:
    meta: dict[str, str] = {}
    times: list[int] = []
    rows: list[list[float]] = []
    header_seen = False
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if "=" in body:
                    k, v = body.split("=", 1)
                    meta[k.strip()] = v.strip()
                continue
            if not header_seen and line.startswith("t_ms"):
                header_seen = True
                continue
            parts = line.split(",")
            if len(parts) != 1 + N_CHANNELS:
                raise RecordingFormatError(
                    f"{path}:{lineno}: expected {1 + N_CHANNELS} columns, got {len(parts)}")
            try:
                t = int(parts[0])
                vals = [float(p) for p in parts[1:]]
            except ValueError as exc:
                raise RecordingFormatError(f"{path}:{lineno}: non-numeric value ({exc})") from None
            times.append(t)
            rows.append(vals)
    rate = float(meta.pop("sample_rate_hz", DEFAULT_RATE_HZ))
    data = np.array(rows, dtype=float).reshape(-1, N_CHANNELS)
    return Recording(np.array(times, dtype=np.int64), data, rate, meta)


def format_recording(rec: Recording) -> str:
    lines = [f"# sample_rate_hz={rec.sample_rate_hz:g}"]
    for k in sorted(rec.meta):
        lines.append(f"# {k}={rec.meta[k]}")
    lines.append(CSV_HEADER)
    for t, row in zip(rec.t_ms, rec.data):
        # +0.0 folds -0.000 into 0.000 so output is stable
        lines.append(f"{int(t)}," + ",".join(f"{v:.3f}" for v in np.round(row, 3) + 0.0))
    return "\n".join(lines) + "\n"


def write_recording(rec: Recording, path: str | os.PathLike) -> None:
    Path(path).write_text(format_recording(rec), encoding="utf-8")


# --- windows ---------------------------------------------------------------

def stack_windows(data: np.ndarray, length: int, stride: int = 1) -> np.ndarray:
    """All windows of ``length`` rows as an (n, length, C) array (a copy)."""
    if stride < 1:
        raise ValueError("stride must be >= 1")
    data = np.asarray(data)
    n = data.shape[0]
    if n < length:
        return np.zeros((0, length) + data.shape[1:], dtype=data.dtype)
    view = np.lib.stride_tricks.sliding_window_view(data, length, axis=0)  # (n-l+1, C, l)
    return np.ascontiguousarray(np.moveaxis(view[::stride], -1, 1))


def sliding_windows(rec: Recording, length: int = WINDOW_LEN, stride: int = 1) -> list[Window]:
    if length != WINDOW_LEN:
        raise ValueError(f"classifier windows are {WINDOW_LEN} frames; use stack_windows for other lengths")
    arr = stack_windows(rec.data, length, stride)
    return [Window(w, i * stride) for i, w in enumerate(arr)]


# --- event JSONL -----------------------------------------------------------

def write_events(events: Iterable[GestureEvent], path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ev in events:
            fh.write(ev.to_json() + "\n")


def read_events(path: str | os.PathLike) -> list[GestureEvent]:
    with open(path, "r", encoding="utf-8") as fh:
        return [GestureEvent.from_json(line) for line in fh if line.strip()]
