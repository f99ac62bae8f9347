import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from scipy.spatial.transform import Rotation

from magsense import fieldsim as fs
from magsense.magdelta import pair_delta_array

vec3 = arrays(np.float64, 3, elements=st.floats(-10, 10))


def test_axial_field():
    m = np.array([0.0, 0.0, 100.0])
    b = fs.dipole_field(m, [0, 0, 0], [0, 0, 4.0])
    np.testing.assert_allclose(b, [0, 0, fs.MU0_4PI * 2 * 100.0 / 4.0 ** 3], rtol=1e-12)


def test_inverse_cube_and_equatorial_ratio():
    m = [0.0, 0.0, 50.0]
    ax1 = fs.dipole_field(m, [0, 0, 0], [0, 0, 3.0])
    ax2 = fs.dipole_field(m, [0, 0, 0], [0, 0, 6.0])
    assert np.linalg.norm(ax2) / np.linalg.norm(ax1) == pytest.approx(1 / 8, rel=1e-12)
    eq = fs.dipole_field(m, [0, 0, 0], [3.0, 0, 0])
    assert np.linalg.norm(eq) == pytest.approx(np.linalg.norm(ax1) / 2, rel=1e-12)
    np.testing.assert_allclose(eq / np.linalg.norm(eq), [0, 0, -1], atol=1e-12)


def test_near_field_is_clamped_and_flagged():
    with pytest.warns(fs.NearFieldWarning):
        b = fs.dipole_field([0, 0, 10.0], [0, 0, 0], [0, 0, 0.1])
    np.testing.assert_allclose(b, fs.dipole_field([0, 0, 10.0], [0, 0, 0], [0, 0, fs.R_MIN_CM]))
    with pytest.warns(fs.NearFieldWarning):
        assert np.all(np.isfinite(fs.dipole_field([0, 0, 10.0], [1, 1, 1], [1, 1, 1])))


@settings(max_examples=50)
@given(vec3, vec3, vec3, arrays(np.float64, 3, elements=st.floats(-np.pi, np.pi)))
def test_rotation_equivariance(m, p, s, rv):
    if np.linalg.norm(s - p) < 1.0:
        return
    rot = Rotation.from_rotvec(rv)
    b = fs.dipole_field(m, p, s)
    b_rot = fs.dipole_field(rot.apply(m), rot.apply(p), rot.apply(s))
    np.testing.assert_allclose(b_rot, rot.apply(b), atol=1e-9 * (1 + np.abs(b).max()))


def test_zero_moment_gives_environment_only():
    arr = fs.SensorArray.linear().noiseless()
    env = fs.EnvironmentField(np.array([0.0, 0.0, 50.0]))
    rec = fs.simulate_recording(fs.MagnetTrajectory.static([1, 2, 3], [0, 0, 0], 2.0), arr, env, seed=0)
    assert np.all(rec.data == np.tile([0.0, 0.0, 50.0], 3))


def test_simulation_deterministic():
    arr = fs.SensorArray.linear()
    traj = fs.MagnetTrajectory.straight([-5, 8, 0], [5, 8, 0], [0, -fs.RING_MOMENT, 0], 3.0)
    a = fs.simulate_recording(traj, arr, fs.EnvironmentField(), seed=4)
    b = fs.simulate_recording(traj, arr, fs.EnvironmentField(), seed=4)
    assert a.equals(b)
    c = fs.simulate_recording(traj, arr, fs.EnvironmentField(), seed=5)
    assert not a.equals(c)


def test_noise_std_monte_carlo():
    arr = fs.SensorArray.linear()
    traj = fs.MagnetTrajectory.static([0, 9, 0], [0, -fs.RING_MOMENT, 0], 10_000 / 17.0)
    rec = fs.simulate_recording(traj, arr, fs.EnvironmentField(), seed=1)
    assert len(rec) >= 10_000
    std = rec.data.reshape(len(rec), 3, 3).std(axis=0)
    np.testing.assert_allclose(std, np.tile(fs.NOISE_STD_UT, (3, 1)), rtol=0.05)


def test_superposition():
    arr = fs.SensorArray.linear().noiseless()
    env = fs.EnvironmentField(device_bias=np.array([[1.0, 2, 3], [0, 0, 0], [-1, 4, 2]]))
    a = fs.MagnetTrajectory.straight([-5, 7, 1], [5, 7, -1], [0, -300.0, 0], 2.0)
    b = fs.MagnetTrajectory.static([2, -6, 3], [100.0, 0, 50], 2.0)
    both = fs.sensor_fields([a, b], arr, env)
    single = fs.sensor_fields(a, arr, env) + fs.sensor_fields(b, arr, env)
    offset = env.uniform_field + env.bias_for(3)
    np.testing.assert_allclose(both, single - offset, atol=1e-9)


def test_pair_differences_ignore_env_rotation():
    arr = fs.SensorArray.linear().noiseless()
    traj = fs.MagnetTrajectory.straight([-4, 6, 2], [4, 9, -2], [0, -fs.RING_MOMENT, 0], 2.0)
    ref = fs.sensor_fields(traj, arr, fs.EnvironmentField())
    for yaw in (45.0, 144.0, 300.0):
        rot = fs.sensor_fields(traj, arr, fs.EnvironmentField().rotated(yaw))
        np.testing.assert_allclose(rot - rot[:, :1], ref - ref[:, :1], atol=1e-9)


def test_ring_moment_calibrated_to_threshold_range():
    arr = fs.SensorArray.linear().noiseless()
    pos, mom = fs.reference_approach(arr, np.array([11.0]))
    b, _ = fs.dipole_field_many(mom * fs.RING_MOMENT, pos, arr.positions)
    assert pair_delta_array(b.reshape(1, 9))[0] == pytest.approx(18.0, rel=1e-9)
    assert fs.SILICON_MOMENT == pytest.approx(0.1 * fs.RING_MOMENT)


@pytest.mark.parametrize("kwargs", [dict(positions=np.zeros((0, 3))),
                                    dict(positions=np.zeros((2, 3))),
                                    dict(positions=np.eye(3), noise_std=(-1, 0, 0))])
def test_sensor_array_invariants(kwargs):
    with pytest.raises(ValueError):
        fs.SensorArray(**kwargs)


def test_trajectory_invariants():
    with pytest.raises(ValueError):
        fs.MagnetTrajectory(np.array([0.0, 2.0]), np.zeros((2, 3)), np.zeros((2, 3)), 1.0)
    with pytest.raises(ValueError):
        fs.MagnetTrajectory(np.array([1.0, 0.5]), np.zeros((2, 3)), np.zeros((2, 3)), 2.0)
    with pytest.raises(ValueError):
        fs.EnvironmentField(np.array([0.0, 0.0, 150.0]))


def test_design_study_nominal_direction_and_zero_jitter():
    trajs = fs.design_study_trajectories(jitter_std_cm=0.0, samples_per_action=5, seed=0)
    assert sorted(trajs) == list(range(8))
    p0 = trajs[0][0].positions
    np.testing.assert_allclose(p0[1] - p0[0], [10.0, 0, 0])
    # passes cross over the origin in the sensor plane
    np.testing.assert_allclose(p0.mean(axis=0)[:2], [0, 0], atol=1e-12)
    for k, paths in trajs.items():
        for tr in paths[1:]:
            np.testing.assert_array_equal(tr.positions, paths[0].positions)
        ang = np.deg2rad(45.0 * k)
        d = paths[0].positions[1] - paths[0].positions[0]
        np.testing.assert_allclose(d / np.linalg.norm(d), [np.cos(ang), np.sin(ang), 0], atol=1e-12)


def test_design_study_jitter_rayleigh_mean():
    sigma = 1.0
    trajs = fs.design_study_trajectories(jitter_std_cm=sigma, seed=3)
    devs = []
    for k, paths in trajs.items():
        ang = np.deg2rad(45.0 * k)
        nominal = -5.0 * np.array([np.cos(ang), np.sin(ang)])
        devs += [np.linalg.norm(tr.positions[0, :2] - nominal) for tr in paths]
    assert np.mean(devs) == pytest.approx(sigma * np.sqrt(np.pi / 2), rel=0.15)
    with pytest.raises(ValueError):
        fs.design_study_trajectories(n_directions=1)


def test_face_corpus_labels():
    recs = fs.synth_gesture_corpus("face8", 1, seed=0)
    assert len(recs) == 8
    assert sorted(int(r.meta["label"]) for r in recs) == list(range(8))
    assert {r.meta["label_name"] for r in recs} == set(fs.FACE_LABELS)


def test_scratch_binary_relabels_scratch9():
    s9 = fs.synth_gesture_corpus("scratch9", 2, seed=5)
    sb = fs.synth_gesture_corpus("scratch_binary", 2, seed=5)
    assert len(s9) == len(sb) == 18
    for a, b in zip(s9, sb):
        np.testing.assert_array_equal(a.data, b.data)
        assert int(b.meta["label"]) == int(int(a.meta["label"]) == fs.SCRATCH_CENTER)


def test_scratch_grid_spacing():
    a = fs.scratch_anchors()
    d = np.linalg.norm(a[:, None] - a[None], axis=-1)[np.triu_indices(9, 1)]
    assert d.min() == pytest.approx(3.0)


def test_gesture_durations_in_range():
    for task, (lo, hi) in (("face8", (3.0, 15.0)), ("scratch9", (2.0, 12.0))):
        scene = fs.GestureScene.for_task(task)
        assert scene.dwell_range_s == (lo, hi)


def test_class_prototypes_distinct():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", fs.NearFieldWarning)
        for task in ("face8", "scratch9"):
            recs = fs.synth_gesture_corpus(task, 2, seed=2)
            protos = {}
            for r in recs:
                g0, g1 = int(r.meta["gt_start"]), int(r.meta["gt_end"])
                protos.setdefault(int(r.meta["label"]), []).append(r.data[g0:g1].mean(axis=0))
            means = np.stack([np.mean(v, axis=0) for _, v in sorted(protos.items())])
            d = np.linalg.norm(means[:, None] - means[None], axis=-1)[np.triu_indices(len(means), 1)]
            assert d.min() > 0


def test_corpus_deterministic_and_seeded():
    a = fs.synth_gesture_corpus("face8", 1, seed=9)
    b = fs.synth_gesture_corpus("face8", 1, seed=9)
    assert all(x.equals(y) for x, y in zip(a, b))
    with pytest.raises(ValueError):
        fs.synth_gesture_corpus("bogus", 1, seed=0)


def test_corpus_roundtrip(tmp_path):
    recs = fs.synth_gesture_corpus("scratch9", 1, seed=1)
    fs.write_corpus(recs, tmp_path, "scratch9", 1)
    header = (tmp_path / fs.INDEX_NAME).read_text().splitlines()[0]
    assert header == "path,label,task,seed"
    back = fs.read_corpus(tmp_path)
    assert [lab for _, lab in back] == [r.meta["label"] for r in recs]
    assert all(r.equals(b, decimals=3) for r, (b, _) in zip(recs, back))


def test_derive_seed_stable():
    assert fs.derive_seed(1, "x") == fs.derive_seed(1, "x")
    assert fs.derive_seed(1, "x") != fs.derive_seed(1, "y")
    assert 0 <= fs.derive_seed("a") < 2 ** 63
