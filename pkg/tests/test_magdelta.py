import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from magsense import fieldsim as fs
from magsense.core import Recording, SampleFrame, Window
from magsense.magdelta import (TriggerState, calibrate_threshold, pair_delta, pair_delta_array,
                               run_trigger, segment_events, smoothing_warmup, subtract_env,
                               trigger_step)
from magsense.preprocess import smooth_array

frames9 = arrays(np.float64, 9, elements=st.floats(-500, 500))


def brute_pair_delta(f):
    r = np.asarray(f).reshape(-1, 3)
    return max(np.linalg.norm(r[i] - r[j]) for i, j in itertools.combinations(range(len(r)), 2))


def test_pair_delta_examples():
    assert pair_delta(np.tile([3.0, -2.0, 40.0], 3)) == 0.0
    assert pair_delta(SampleFrame(0, [[0, 0, 0], [0, 0, 0], [20, 0, 0]])) == 20.0


@given(frames9)
def test_pair_delta_matches_brute_force(f):
    assert pair_delta(f) == pytest.approx(brute_pair_delta(f), rel=1e-12, abs=1e-9)


def test_uniform_field_immunity_bulk():
    rng = np.random.default_rng(0)
    frames = rng.normal(0, 80, (10_000, 9))
    offsets = rng.normal(0, 100, (10_000, 3))
    shifted = frames + np.tile(offsets, 3)
    np.testing.assert_allclose(pair_delta_array(shifted), pair_delta_array(frames), atol=1e-9)


def test_trigger_fires_on_threshold_crossing():
    state = TriggerState()
    base = np.tile([20.0, 5.0, -40.0], 3)
    for _ in range(20):
        state, dec = trigger_step(state, base)
        assert not dec.detected
    spike = base.copy()
    spike[6] += 20.0
    state, dec = trigger_step(state, spike)
    assert dec.detected and dec.max_pair_delta_uT == pytest.approx(20.0)
    np.testing.assert_array_equal(dec.env_estimate, base)


def test_never_fires_below_threshold():
    state = TriggerState()
    f = np.zeros(9)
    f[6] = 17.9
    for _ in range(100):
        state, dec = trigger_step(state, f)
        assert not dec.detected


def test_queue_capacity_and_threshold_validation():
    with pytest.raises(ValueError):
        TriggerState(threshold_uT=0.0)
    state = TriggerState()
    for i in range(40):
        trigger_step(state, np.full(9, float(i)))
    assert len(state.queue) == 16
    np.testing.assert_array_equal(state.env_estimate, np.full(9, 24.0))


def test_env_estimate_frozen_before_onset():
    rng = np.random.default_rng(1)
    quiet = rng.normal(0, 0.5, (30, 9)) + np.tile([10.0, 0.0, -40.0], 3)
    event = quiet[-1] + np.r_[np.zeros(6), 60.0, 0.0, 0.0]
    data = np.vstack([quiet, np.tile(event, (10, 1)), quiet[:10]])
    detected, active, env = run_trigger(data)
    onset = int(np.argmax(detected))
    assert onset == 30
    # every in-event estimate equals one quiet frame recorded before onset
    for i in range(onset, onset + 10):
        assert any(np.array_equal(env[i], q) for q in quiet[:onset])


def ring_approach(start_cm=30.0, stop_cm=5.0, step_cm=0.01):
    arr = fs.SensorArray.linear().noiseless()
    d = np.arange(start_cm, stop_cm, -step_cm)
    pos, mom = fs.reference_approach(arr, d)
    b, _ = fs.dipole_field_many(mom * fs.RING_MOMENT, pos, arr.positions)
    return d, b.reshape(len(d), 9) + np.tile(fs.earth_field(), 3)


def test_detection_boundary_at_eleven_cm():
    d, data = ring_approach()
    detected, _, _ = run_trigger(data)
    first = d[int(np.argmax(detected))]
    assert abs(first - 11.0) <= 0.5


@pytest.mark.parametrize("yaw", [0.0, 72.0, 200.0])
def test_decisions_invariant_to_env_rotation(yaw):
    _, data = ring_approach(step_cm=0.2)
    rotated = data - np.tile(fs.earth_field(), 3) + np.tile(fs.earth_field(yaw_deg=yaw), 3)
    np.testing.assert_array_equal(run_trigger(data)[0], run_trigger(rotated)[0])


def test_segment_examples():
    assert segment_events(np.zeros((50, 9))) == []
    data = np.zeros((80, 9))
    data[20:50, 6] = 40.0
    segs = segment_events(data, min_event_frames=5)
    assert [(s.start_idx, s.end_idx) for s in segs] == [(20, 50)]
    # a three-frame blip is rejected at the default minimum of four
    blip = np.zeros((40, 9))
    blip[10:13, 6] = 40.0
    assert segment_events(blip) == []


def test_short_gaps_are_bridged():
    data = np.zeros((80, 9))
    data[20:30, 6] = 40.0
    data[32:40, 6] = 40.0  # gap of 2 < hysteresis 3
    data[50:60, 6] = 40.0  # gap of 10 splits
    segs = segment_events(data)
    assert [(s.start_idx, s.end_idx) for s in segs] == [(20, 40), (50, 60)]


@given(st.lists(st.tuples(st.integers(0, 12), st.integers(1, 15)), min_size=1, max_size=6),
       st.integers(0, 10_000))
def test_online_offline_equivalence(runs, cut_seed):
    rows, t = [], 0
    for gap, length in runs:
        rows += [0.0] * gap + [40.0] * length
    data = np.zeros((len(rows) + 5, 9))
    data[: len(rows), 6] = rows
    full = segment_events(data)
    cut = cut_seed % (len(data) + 1)
    prefix = segment_events(data[:cut])
    # events that closed (trigger released) inside the prefix are reported identically
    closed = [s for s in full if s.end_idx + 3 <= cut]
    assert [(s.start_idx, s.end_idx) for s in prefix[: len(closed)]] == [(s.start_idx, s.end_idx) for s in closed]


def test_subtract_env_examples():
    env = np.arange(9.0)
    w = Window(np.tile(env, (16, 1)))
    np.testing.assert_array_equal(subtract_env(w, env).data, 0.0)
    w2 = Window(np.random.default_rng(0).normal(size=(16, 9)))
    np.testing.assert_allclose(subtract_env(w2, env).data + env, w2.data)
    with pytest.raises(ValueError):
        subtract_env(w, np.full(9, np.nan))


def test_subtract_env_recovers_dipole():
    arr = fs.SensorArray.linear().noiseless()
    env = fs.EnvironmentField(fs.earth_field(yaw_deg=40.0))
    traj = fs.MagnetTrajectory.straight([8.0, -8.0, 3.0], [1.0, -6.0, 2.0], [0.0, fs.RING_MOMENT, 0.0], 2.0)
    t = fs.sample_times(2.0, 17.0)[:16]
    total = fs.sensor_fields(traj, arr, env, t).reshape(16, 9)
    dipole = fs.sensor_fields(traj, arr, None, t).reshape(16, 9)
    out = subtract_env(Window(total), np.tile(env.uniform_field, 3))
    assert np.abs(out.data - dipole).max() < 1e-6


def test_calibrate_threshold_examples():
    quiet = Recording.from_array(np.tile(np.tile([10.0, 0.0, -40.0], 3), (17 * 6, 1)))
    assert calibrate_threshold(quiet, floor_uT=1.5) == 1.5
    spiky = np.zeros((17 * 6, 9))
    spiky[40, 0] = 6.0
    assert calibrate_threshold(Recording.from_array(spiky)) == pytest.approx(18.0)
    with pytest.raises(ValueError):
        calibrate_threshold(Recording.from_array(np.zeros((17 * 4, 9))))


@pytest.mark.parametrize("seed", range(10))
def test_threshold_from_noise_matches_monte_carlo(seed):
    rng = np.random.default_rng(seed)
    clean = np.tile(np.tile(fs.earth_field(), 3), (17 * 30, 1))
    noisy = clean + rng.normal(size=clean.shape) * np.tile(fs.NOISE_STD_UT, 3)
    thr = calibrate_threshold(Recording.from_array(noisy), smoothing_alpha=0.5)
    # oracle: brute-force pair deltas of the settled smoothed stream, times three
    settled = smooth_array(noisy, 0.5)[smoothing_warmup(0.5):]
    assert thr == pytest.approx(3 * max(brute_pair_delta(f) for f in settled))
    assert thr < 18.0


def test_smoothing_warmup():
    assert smoothing_warmup(0.5) == 7
    assert 0.5 ** 7 < 0.01 <= 0.5 ** 6


def test_event_recovery_on_corpus():
    hits, total = 0, 0
    for task in ("face8", "scratch9"):
        for rec in fs.synth_gesture_corpus(task, 2, seed=11):
            gt = (int(rec.meta["gt_start"]), int(rec.meta["gt_end"]))
            segs = segment_events(smooth_array(rec.data))
            total += 1
            hits += any(abs(s.start_idx - gt[0]) <= 3 and abs(s.end_idx - gt[1]) <= 3 for s in segs)
    assert hits / total >= 0.95
