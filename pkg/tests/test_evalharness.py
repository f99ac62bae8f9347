import csv
import json

import numpy as np
import pytest

from magsense import evalharness as eh
from magsense import fieldsim as fs
from magsense.classify import metrics_from_confusion
from magsense.pipeline import PipelineConfig

FAST = dict(orientations_deg=(0.0, 144.0), n_test_per_class=2, models=("max-margin", "pca+random-forest"))


@pytest.mark.parametrize("kw", [dict(seeds=()), dict(orientations_deg=(360.0,)), dict(models=("svm-rbf",)),
                                dict(task="elbow"), dict(user_id=1)])
def test_spec_validation(kw):
    with pytest.raises(ValueError):
        eh.ExperimentSpec(**kw)


def test_default_orientations_evenly_spaced():
    spec = eh.ExperimentSpec()
    assert len(spec.orientations_deg) == 5
    assert np.allclose(np.diff(spec.orientations_deg), 72.0)
    assert spec.config_hash() == eh.ExperimentSpec().config_hash()
    assert spec.config_hash() != eh.ExperimentSpec(seeds=(1,)).config_hash()


@pytest.fixture(scope="module")
def fast_report():
    return eh.run_grid(eh.ExperimentSpec(task="face8", **FAST))


def test_grid_shape_and_metric_ranges(fast_report):
    assert len(fast_report.cells) == 2 * 2  # models x orientations
    for c in fast_report.cells:
        assert all(0.0 <= v <= 1.0 for v in c.metrics.values())
        assert c.confusion.sum() == 8 * 2


def test_grid_byte_identical(fast_report, tmp_path):
    again = eh.run_grid(eh.ExperimentSpec(task="face8", **FAST))
    fast_report.write(tmp_path / "a")
    again.write(tmp_path / "b")
    for name in ("report.csv", "report_cells.csv", "report_confusion.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_grid_invariant_to_model_order(fast_report, tmp_path):
    kw = dict(FAST, models=FAST["models"][::-1])
    flipped = eh.run_grid(eh.ExperimentSpec(task="face8", **kw))
    fast_report.write(tmp_path / "a")
    flipped.write(tmp_path / "b")
    assert (tmp_path / "a" / "report.csv").read_bytes() == (tmp_path / "b" / "report.csv").read_bytes()


def test_metrics_recomputable_from_stored_confusion(fast_report, tmp_path):
    fast_report.write(tmp_path)
    stored = json.loads((tmp_path / "report_confusion.json").read_text())
    with open(tmp_path / "report_cells.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(stored) == len(rows)
    for entry, row in zip(stored, rows):
        m = metrics_from_confusion(np.array(entry["confusion"]))
        m["auc"] = entry["auc"]
        for k in ("accuracy", "f1", "precision", "recall", "auc"):
            assert f"{m[k]:.6f}" == row[k]
    with open(tmp_path / "report.csv", newline="") as fh:
        header = next(csv.reader(fh))
    assert header == ["task", "model", "accuracy", "f1", "precision", "recall", "auc"]


def test_noise_free_face8_is_lossless():
    quiet = fs.SensorArray.linear().noiseless()
    spec = eh.ExperimentSpec(task="face8", orientations_deg=(0.0, 216.0), n_test_per_class=3,
                             models=("max-margin",))
    rep = eh.run_grid(spec, array=quiet, train_array=quiet)
    assert rep.mean("max-margin") == 1.0


def test_remount_zero_jitter_identical():
    spec = eh.ExperimentSpec(task="face8", **FAST)
    before, after = eh.run_remount(spec, 0.0)
    for a, b in zip(before.cells, after.cells):
        np.testing.assert_array_equal(a.confusion, b.confusion)


def test_remount_large_jitter_degrades():
    spec = eh.ExperimentSpec(task="face8", orientations_deg=(0.0,), n_test_per_class=5, models=("max-margin",))
    before, after = eh.run_remount(spec, 2.0)
    assert after.mean("max-margin") < before.mean("max-margin")


def test_perturbed_array_is_rigid():
    arr = fs.SensorArray.linear()
    moved = arr.perturbed(0.3, np.random.default_rng(0))
    d0 = np.linalg.norm(arr.positions[:, None] - arr.positions[None], axis=-1)
    d1 = np.linalg.norm(moved.positions[:, None] - moved.positions[None], axis=-1)
    np.testing.assert_allclose(d0, d1, atol=1e-12)
    assert not np.allclose(moved.positions, arr.positions)


def test_design_study_small():
    cfg = fs.DesignStudyConfig(samples_per_action=20)
    acc = eh.run_design_study(max_sensors=2, seed=0, cfg=cfg, n_train=5)
    assert sorted(acc) == [1, 2]
    assert all(0.0 <= a <= 1.0 for a in acc.values())
    with pytest.raises(ValueError):
        eh.run_design_study(max_sensors=0)


def test_class_count_curve():
    spec = eh.ExperimentSpec(task="face8", n_test_per_class=2, pretrain_epochs=3, pretrain_duration_s=20.0)
    acc = eh.run_class_count("face8", 0, spec=spec)
    assert sorted(acc) == list(range(2, 9))
    assert all(0.0 <= a <= 1.0 for a in acc.values())


@pytest.fixture(scope="module")
def bench_model():
    spec = eh.ExperimentSpec(task="face8", pretrain_epochs=3, pretrain_duration_s=20.0)
    enc, _ = eh.pretrained_encoder(0, spec.pretrain_users, True, 3, 20.0)
    cfg = PipelineConfig(profile=eh.calibration_profile(0))
    train = eh._events(fs.synth_gesture_corpus("face8", 3, 1), cfg)
    return eh.fit_models(train, ["encoder+max-margin"], enc, 0)[0], cfg


def test_latency_report_fields(bench_model):
    model, cfg = bench_model
    data = eh.latency_stream("face8", 0, n_per_class=1)
    rep = eh.benchmark_latency(model, cfg, data, 300)
    assert rep.n_samples == 300
    assert 0 < rep.mean_ms <= rep.p99_ms <= rep.max_ms
    assert rep.real_time == (rep.mean_ms < 1000 / 17)
    with pytest.raises(ValueError):
        eh.benchmark_latency(model, cfg, np.zeros((0, 9)))


def test_manifest_and_plot_csv(tmp_path):
    p = eh.write_manifest(tmp_path / "m.txt", {"b": 2, "a": [1, 2]}, [0, 1], {"note": "x"})
    lines = p.read_text().splitlines()
    assert lines[0] == "format=magsense-manifest/1"
    assert lines[1] == f"config_hash={eh.config_hash({'a': [1, 2], 'b': 2})}"
    assert "seeds=0,1" in lines and 'config.a=[1, 2]' in lines and "note=x" in lines
    q = eh.write_plot_csv(tmp_path / "p.csv", "n", "acc", {2: 0.5, 1: 0.25})
    assert q.read_text() == "n,acc\n1,0.250000\n2,0.500000\n"
