import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from magsense.core import (CSV_HEADER, GestureEvent, Recording, RecordingFormatError,
                           RecordingValidationError, SampleFrame, Window, read_events,
                           read_recording, sliding_windows, stack_windows, write_events,
                           write_recording)


def _rec(n, seed=0, rate=17.0):
    rng = np.random.default_rng(seed)
    return Recording.from_array(rng.normal(0, 40, (n, 9)), rate, {"user": "3"})


def test_single_row_file(tmp_path):
    p = tmp_path / "one.csv"
    p.write_text("0,1,2,3,4,5,6,7,8,9\n")
    rec = read_recording(p)
    assert len(rec) == 1
    np.testing.assert_array_equal(rec.frames[0].readings, [[1, 2, 3], [4, 5, 6], [7, 8, 9]])


def test_decreasing_timestamps_rejected(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text(CSV_HEADER + "\n0,1,2,3,4,5,6,7,8,9\n59,1,2,3,4,5,6,7,8,9\n30,1,2,3,4,5,6,7,8,9\n")
    with pytest.raises(RecordingValidationError, match="strictly increasing"):
        read_recording(p)


@pytest.mark.parametrize("row, msg", [("0,1,2,3", "expected 10 columns"), ("0,1,2,3,4,5,6,7,8,x", "non-numeric")])
def test_malformed_row_names_line(tmp_path, row, msg):
    p = tmp_path / "bad.csv"
    p.write_text(f"# user=1\n{CSV_HEADER}\n{row}\n")
    with pytest.raises(RecordingFormatError, match=rf":3: {msg}"):
        read_recording(p)


def test_empty_recording_writes_header_only(tmp_path):
    rec = Recording(np.zeros(0, dtype=np.int64), np.zeros((0, 9)))
    p = tmp_path / "empty.csv"
    write_recording(rec, p)
    body = [l for l in p.read_text().splitlines() if not l.startswith("#")]
    assert body == [CSV_HEADER]
    assert len(read_recording(p)) == 0


def test_write_is_byte_stable(tmp_path):
    rec = _rec(40)
    write_recording(rec, tmp_path / "a.csv")
    write_recording(rec, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 30), st.just(9)),
              elements=st.floats(-500, 500, allow_nan=False)))
def test_roundtrip_three_decimals(tmp_path_factory, data):
    rec = Recording.from_array(data, 17.0, {"label": "2"})
    p = tmp_path_factory.mktemp("rt") / "r.csv"
    write_recording(rec, p)
    back = read_recording(p)
    assert back.meta == {"label": "2"}
    assert back.sample_rate_hz == 17.0
    assert rec.equals(back, decimals=3)


def test_rate_check():
    t = np.arange(10) * 100  # 10 Hz
    with pytest.raises(RecordingValidationError, match="within 20%"):
        Recording(t, np.zeros((10, 9)), 17.0)
    Recording(t, np.zeros((10, 9)), 10.0)


def test_non_finite_rejected():
    d = np.zeros((3, 9))
    d[1, 4] = np.nan
    with pytest.raises(RecordingValidationError):
        Recording.from_array(d)
    with pytest.raises(RecordingValidationError):
        SampleFrame(0, np.full((3, 3), np.inf))


def test_recording_is_read_only():
    rec = _rec(5)
    with pytest.raises(ValueError):
        rec.data[0, 0] = 1.0


def test_window_shape():
    Window(np.zeros((16, 9)))
    with pytest.raises(ValueError):
        Window(np.zeros((15, 9)))


@pytest.mark.parametrize("n, stride, expected", [(16, 1, 1), (20, 1, 5), (48, 4, 9), (10, 1, 0)])
def test_window_counts(n, stride, expected):
    assert len(sliding_windows(_rec(n), 16, stride)) == expected


@given(st.integers(16, 80), st.integers(1, 7))
def test_windows_match_enumeration(n, stride):
    rec = _rec(n, seed=n)
    ws = sliding_windows(rec, 16, stride)
    starts = list(range(0, n - 16 + 1, stride))
    assert [w.origin for w in ws] == starts
    assert len(ws) == (n - 16) // stride + 1
    for w in ws:
        np.testing.assert_array_equal(w.data, rec.data[w.origin:w.origin + 16])


def test_concatenation_changes_boundary_windows():
    a, b = _rec(20, 1), _rec(20, 2)
    joined = Recording.from_array(np.vstack([a.data, b.data]))
    separate = len(sliding_windows(a)) + len(sliding_windows(b))
    assert len(sliding_windows(joined)) == separate + 15


def test_stack_windows_shape():
    x = np.arange(30 * 2).reshape(30, 2)
    w = stack_windows(x, 8, 3)
    assert w.shape == (8, 8, 2)
    np.testing.assert_array_equal(w[2], x[6:14])


def test_gesture_event_invariants(tmp_path):
    ev = GestureEvent.from_votes(3, 10, [1, 1, 2], 1)
    assert ev.confidence == pytest.approx(2 / 3)
    with pytest.raises(ValueError):
        GestureEvent(5, 5, (1,), 1, 1.0)
    with pytest.raises(ValueError):
        GestureEvent(0, 4, (1, 2), 3, 0.5)
    with pytest.raises(ValueError):
        GestureEvent(0, 4, (1, 2), 1, 0.9)
    write_events([ev, GestureEvent.from_votes(20, 30, [0], 0)], tmp_path / "e.jsonl")
    back = read_events(tmp_path / "e.jsonl")
    assert back[0] == ev and len(back) == 2
