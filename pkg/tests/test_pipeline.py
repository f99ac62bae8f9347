import numpy as np
import pytest

from magsense import fieldsim as fs
from magsense.core import Recording
from magsense.magdelta import Segment
from magsense.pipeline import (PipelineConfig, StreamingPipeline, extract_events, infer_recording,
                               main_event, prepare_windows, pretraining_contexts, window_ending_at)
from magsense.preprocess import CalibrationProfile


def _predict(windows):
    # deterministic stand-in: label from the sign pattern of the last frame
    last = windows[:, -1, :]
    labels = (last[:, 6] > last[:, 0]).astype(int) + 2 * (last[:, 2] > 0)
    return labels, np.abs(last).sum(axis=1)


def test_window_ending_at_pads_with_first_row():
    data = np.arange(5 * 9, dtype=float).reshape(5, 9)
    w = window_ending_at(data, 2)
    assert w.shape == (16, 9)
    np.testing.assert_array_equal(w[:13], np.tile(data[0], (13, 1)))
    np.testing.assert_array_equal(w[13:], data[:3])
    long = np.arange(30 * 9, dtype=float).reshape(30, 9)
    np.testing.assert_array_equal(window_ending_at(long, 20), long[5:21])


def test_prepare_windows_modes():
    data = np.tile(np.arange(9.0), (30, 1))
    seg = Segment(10, 14, np.arange(9.0))
    prof = CalibrationProfile(np.ones((3, 3)), 50.0)
    on = prepare_windows(data, seg, PipelineConfig(profile=prof))
    assert on.shape == (4, 16, 9) and np.all(on == 0.0)  # background removed, zeros preserved
    off = prepare_windows(data, seg, PipelineConfig(magdelta=False, profile=prof))
    np.testing.assert_allclose(off[0, 0], (np.arange(9.0) - 1.0) / 50.0)


def test_quiet_recording_has_no_events():
    rng = np.random.default_rng(0)
    data = np.tile(fs.earth_field(), 3) + rng.normal(size=(300, 9)) * np.tile(fs.NOISE_STD_UT, 3)
    rec = Recording.from_array(data)
    assert infer_recording(rec, _predict, PipelineConfig()) == []
    assert StreamingPipeline(_predict, PipelineConfig()).run(data) == []
    assert main_event([]) is None


@pytest.mark.parametrize("magdelta", [True, False])
def test_streaming_matches_offline(magdelta):
    recs = fs.synth_gesture_corpus("face8", 1, seed=4)[:4] + fs.synth_gesture_corpus("scratch9", 1, seed=4)[:3]
    stream = np.concatenate([r.data for r in recs])
    cfg = PipelineConfig(magdelta=magdelta, profile=CalibrationProfile(np.full((3, 3), 2.0), 49.0))
    offline = infer_recording(stream, _predict, cfg)
    online = StreamingPipeline(_predict, cfg).run(stream)
    assert len(offline) >= len(recs)
    assert offline == online


def test_stream_truncated_inside_event_is_flushed():
    rec = fs.synth_gesture_corpus("face8", 1, seed=2)[0]
    cut = int(rec.meta["gt_start"]) + 20
    data = rec.data[:cut]
    online = StreamingPipeline(_predict, PipelineConfig()).run(data)
    offline = infer_recording(data, _predict, PipelineConfig())
    assert online == offline and len(online) == 1


def test_main_event_is_longest():
    rec = fs.synth_gesture_corpus("face8", 1, seed=3)[2]
    events = extract_events(rec, PipelineConfig())
    seg, wins = main_event(events)
    assert len(wins) == seg.end_idx - seg.start_idx
    assert all(s.end_idx - s.start_idx <= seg.end_idx - seg.start_idx for s, _ in events)


def test_pretraining_contexts():
    recs = [fs.free_movement_recording(0, 1, duration_s=10.0)]
    ctx = pretraining_contexts(recs, PipelineConfig(), 32, 4)
    n = len(recs[0])
    assert ctx.shape == ((n - 32) // 4 + 1, 32, 9)
    assert np.all(np.isfinite(ctx))
    assert pretraining_contexts([], PipelineConfig()).shape == (0, 32, 9)
