"""Desk-scale experiments on synthetic data.

* ``run_design_study``: accuracy versus sensor count for straight magnet passes.
* ``run_grid``: few-shot encoder + classifier versus raw-window baselines,
  across wearer orientations, with or without environmental subtraction.
* ``run_remount``: the same fitted models on a re-attached (shifted) unit.
* ``benchmark_latency``: per-sample cost of the streaming pipeline.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from sklearn.svm import LinearSVC

from . import fieldsim as fs
from .classify import (BASELINE_KINDS, ClassifierModel, FewShotSet, confusion_matrix, fit, fit_arrays,
                       flatten_windows, macro_ovr_auc, metrics_from_confusion, vote_scores)
from .encoder import EncoderModel, TrainConfig, pretrain
from .pipeline import PipelineConfig, StreamingPipeline, extract_events, main_event, vote
from .preprocess import CalibrationProfile, calibrate_device_bias, smooth_array

REPORT_FIELDS = ("task", "model", "accuracy", "f1", "precision", "recall", "auc")
DETAIL_FIELDS = ("task", "model", "orientation_deg", "seed", "accuracy", "f1", "precision", "recall",
                 "auc", "window_accuracy")
DEFAULT_ORIENTATIONS = (0.0, 72.0, 144.0, 216.0, 288.0)
ENCODER_PREFIX = "encoder+"
DEFAULT_MODELS = ("encoder+max-margin",) + BASELINE_KINDS
PERIOD_MS = 1000.0 / 17.0


# --- design study ----------------------------------------------------------------

def design_study_features(trajs: dict[int, list[fs.MagnetTrajectory]], array: fs.SensorArray,
                          seed: int, n_ticks: int = 32,
                          env: fs.EnvironmentField | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Smoothed noisy readings of every pass, resampled to ``n_ticks`` and scaled by |B_earth|.

    Returns features (n_passes, n_ticks * 3 * n_sensors) and direction labels.
    """
    env = env or fs.EnvironmentField()
    rng = np.random.default_rng(seed)
    feats, labels = [], []
    for k in sorted(trajs):
        for tr in trajs[k]:
            t = fs.sample_times(tr.duration_s, array.sample_rate_hz)
            clean = fs.sensor_fields(tr, array, env, t, warn=False)
            noisy = clean + rng.normal(size=clean.shape) * array.noise_std
            sm = smooth_array(noisy.reshape(len(t), -1))
            grid = np.linspace(0.0, len(t) - 1.0, n_ticks)
            res = np.stack([np.interp(grid, np.arange(len(t)), sm[:, c]) for c in range(sm.shape[1])], axis=1)
            feats.append(res.ravel() / np.linalg.norm(env.uniform_field))
            labels.append(k)
    return np.array(feats), np.array(labels)


def run_design_study(max_sensors: int = 6, seed: int = 0, cfg: fs.DesignStudyConfig | None = None,
                     n_train: int = 10) -> dict[int, float]:
    """Macro accuracy of a linear max-margin classifier versus sensor count.

    The same jittered passes are replayed over arrays of 1..max_sensors
    sensors at the standard spacing; ``n_train`` passes per direction train
    the classifier and the rest test it.
    """
    if max_sensors < 1:
        raise ValueError("max_sensors must be >= 1")
    cfg = cfg or fs.DesignStudyConfig()
    trajs = fs.design_study_trajectories(cfg.n_directions, cfg.jitter_std_cm, cfg.samples_per_action,
                                         seed, cfg)
    out = {}
    for n in range(1, max_sensors + 1):
        X, y = design_study_features(trajs, fs.SensorArray.linear(n), fs.derive_seed(seed, "noise", n))
        train = np.tile(np.arange(cfg.samples_per_action) < n_train, cfg.n_directions)
        clf = LinearSVC(C=1.0, max_iter=50000, random_state=seed).fit(X[train], y[train])
        pred = clf.predict(X[~train])
        # macro average over directions; classes are balanced so this equals plain accuracy
        out[n] = float(np.mean([np.mean(pred[y[~train] == k] == k) for k in range(cfg.n_directions)]))
    return out


# --- grid ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentSpec:
    name: str = "grid"
    task: str = "face8"
    seeds: tuple[int, ...] = (0,)
    orientations_deg: tuple[float, ...] = DEFAULT_ORIENTATIONS
    models: tuple[str, ...] = DEFAULT_MODELS
    magdelta_enabled: bool = True
    k_shot: int = 3
    n_test_per_class: int = 10
    user_id: int = 0
    pretrain_users: tuple[int, ...] = (1, 2, 3, 4, 5, 6, 7, 8)
    pretrain_epochs: int = 60
    pretrain_duration_s: float = 45.0

    def __post_init__(self) -> None:
        if not self.seeds:
            raise ValueError("need at least one seed")
        if any(not 0.0 <= o < 360.0 for o in self.orientations_deg):
            raise ValueError("orientations must lie in [0, 360)")
        if self.task not in fs.TASKS:
            raise ValueError(f"task must be one of {fs.TASKS}")
        for m in self.models:
            base = m[len(ENCODER_PREFIX):] if m.startswith(ENCODER_PREFIX) else m
            if base not in ("max-margin", "nearest-centroid") + BASELINE_KINDS:
                raise ValueError(f"unknown model {m!r}")
        if self.user_id in self.pretrain_users:
            raise ValueError("the evaluated user must be held out of pretraining")

    def config_hash(self) -> str:
        return config_hash(asdict(self))


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class CellResult:
    task: str
    model: str
    orientation_deg: float
    seed: int
    confusion: np.ndarray
    auc: float
    window_accuracy: float

    @property
    def metrics(self) -> dict[str, float]:
        m = metrics_from_confusion(self.confusion)
        m["auc"] = self.auc
        return m


@dataclass
class MetricsReport:
    cells: list[CellResult] = field(default_factory=list)

    def summary(self) -> dict[tuple[str, str], dict[str, float]]:
        """Mean metrics per (task, model) over orientations and seeds."""
        out: dict[tuple[str, str], dict[str, float]] = {}
        keys = sorted({(c.task, c.model) for c in self.cells})
        for key in keys:
            rows = [c.metrics for c in self.cells if (c.task, c.model) == key]
            out[key] = {f: float(np.mean([r[f] for r in rows])) for f in REPORT_FIELDS[2:]}
        return out

    def mean(self, model: str, metric: str = "accuracy") -> float:
        return float(np.mean([c.metrics[metric] for c in self.cells if c.model == model]))

    def mean_window_accuracy(self, model: str) -> float:
        return float(np.mean([c.window_accuracy for c in self.cells if c.model == model]))

    def write(self, out_dir: str | os.PathLike, stem: str = "report") -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / f"{stem}.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(REPORT_FIELDS)
            for (task, model), m in self.summary().items():
                w.writerow([task, model] + [f"{m[f]:.6f}" for f in REPORT_FIELDS[2:]])
        with open(out / f"{stem}_cells.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(DETAIL_FIELDS)
            for c in self._sorted():
                m = c.metrics
                w.writerow([c.task, c.model, f"{c.orientation_deg:g}", c.seed]
                           + [f"{m[f]:.6f}" for f in REPORT_FIELDS[2:]] + [f"{c.window_accuracy:.6f}"])
        confusions = [{"task": c.task, "model": c.model, "orientation_deg": c.orientation_deg,
                       "seed": c.seed, "confusion": c.confusion.tolist(), "auc": c.auc}
                      for c in self._sorted()]
        (out / f"{stem}_confusion.json").write_text(json.dumps(confusions, indent=1) + "\n", encoding="utf-8")
        return out / f"{stem}.csv"

    def _sorted(self) -> list[CellResult]:
        return sorted(self.cells, key=lambda c: (c.task, c.model, c.orientation_deg, c.seed))


_ENCODER_CACHE: dict[tuple, tuple[EncoderModel, list[float]]] = {}


def pretrained_encoder(seed: int, users: Sequence[int], magdelta: bool = True, epochs: int = 60,
                       duration_s: float = 45.0, log: Callable | None = None) -> tuple[EncoderModel, list[float]]:
    """Encoder pretrained on free movement from ``users``; memoized per process."""
    key = (seed, tuple(users), magdelta, epochs, duration_s)
    if key not in _ENCODER_CACHE:
        corpus = fs.free_movement_corpus(list(users), fs.derive_seed(seed, "pretrain"), duration_s)
        cfg = TrainConfig(max_epochs=epochs, seed=seed)
        _ENCODER_CACHE[key] = pretrain(corpus, cfg, PipelineConfig(magdelta=magdelta), log)
    return _ENCODER_CACHE[key]


def calibration_profile(seed: int, array: fs.SensorArray | None = None) -> CalibrationProfile:
    env = fs.EnvironmentField()
    rec = fs.simulate_calibration_recording(env, fs.derive_seed(seed, "calibration"), array=array)
    return calibrate_device_bias(rec)


@dataclass
class _EventSet:
    labels: np.ndarray            # (n_recordings,)
    windows: list[np.ndarray | None]  # per recording: (n_w, 16, 9) or None when nothing triggered


def _events(recs, cfg: PipelineConfig) -> _EventSet:
    wins, labels = [], []
    for rec in recs:
        ev = main_event(extract_events(rec, cfg))
        wins.append(None if ev is None else ev[1])
        labels.append(int(rec.meta["label"]))
    return _EventSet(np.array(labels), wins)


@dataclass
class FittedModel:
    name: str
    clf: ClassifierModel
    encoder: EncoderModel | None

    def features(self, windows: np.ndarray) -> np.ndarray:
        if self.encoder is not None:
            return self.encoder.encode_batch(windows)
        return flatten_windows(windows)

    def predict(self, windows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return self.clf.predict(self.features(windows))


def fit_models(train: _EventSet, models: Sequence[str], encoder: EncoderModel | None,
               seed: int) -> list[FittedModel]:
    keep = [i for i, w in enumerate(train.windows) if w is not None]
    if not keep:
        raise RuntimeError("no training recording produced an event")
    wins = np.concatenate([train.windows[i] for i in keep])
    labels = np.concatenate([np.full(len(train.windows[i]), train.labels[i]) for i in keep])
    groups = np.concatenate([np.full(len(train.windows[i]), i) for i in keep])
    emb = encoder.encode_batch(wins) if encoder is not None and any(
        m.startswith(ENCODER_PREFIX) for m in models) else None
    out = []
    for name in models:
        if name.startswith(ENCODER_PREFIX):
            clf = fit(FewShotSet(emb, labels, groups), name[len(ENCODER_PREFIX):], seed)
            out.append(FittedModel(name, clf, encoder))
        else:
            clf = fit(FewShotSet(flatten_windows(wins), labels, groups), name, seed)
            out.append(FittedModel(name, clf, None))
    return out


def evaluate_model(model: FittedModel, test: _EventSet, n_classes: int, task: str,
                   orientation: float, seed: int) -> CellResult:
    preds, scores = [], []
    win_correct, win_total = 0, 0
    classes = np.arange(n_classes)
    for label, w in zip(test.labels, test.windows):
        if w is None:
            preds.append(-1)
            scores.append(np.zeros(n_classes))
            continue
        lab, sc = model.predict(w)
        preds.append(vote(lab, sc))
        scores.append(vote_scores(lab, classes))
        win_correct += int(np.sum(lab == label))
        win_total += len(lab)
    cm = confusion_matrix(test.labels, preds, n_classes)
    auc = macro_ovr_auc(test.labels, np.array(scores), n_classes)
    return CellResult(task, model.name, float(orientation), seed, cm, auc,
                      win_correct / win_total if win_total else 0.0)


def run_grid(spec: ExperimentSpec, array: fs.SensorArray | None = None,
             log: Callable[[str], None] | None = None,
             train_array: fs.SensorArray | None = None) -> MetricsReport:
    """Fit once per seed at orientation 0 on k labelled recordings per class, test at every orientation.

    ``array`` is the unit used for the test recordings and ``train_array``
    the one used for the labelled examples (both default to the standard
    unit). With ``magdelta_enabled`` off, events are still segmented by the
    trigger but windows reach the models without background subtraction.
    """
    report = MetricsReport()
    n_classes = fs.n_classes(spec.task)
    for seed in spec.seeds:
        profile = calibration_profile(seed)
        cfg = PipelineConfig(magdelta=spec.magdelta_enabled, profile=profile)
        encoder = None
        if any(m.startswith(ENCODER_PREFIX) for m in spec.models):
            encoder, _ = pretrained_encoder(seed, spec.pretrain_users, spec.magdelta_enabled,
                                            spec.pretrain_epochs, spec.pretrain_duration_s)
        train_recs = fs.synth_gesture_corpus(spec.task, spec.k_shot, fs.derive_seed(seed, "train"),
                                             spec.user_id, 0.0, train_array)
        fitted = fit_models(_events(train_recs, cfg), spec.models, encoder, seed)
        for orient in spec.orientations_deg:
            test_recs = fs.synth_gesture_corpus(spec.task, spec.n_test_per_class,
                                                fs.derive_seed(seed, "test", orient), spec.user_id,
                                                orient, array)
            test = _events(test_recs, cfg)
            for m in fitted:
                report.cells.append(evaluate_model(m, test, n_classes, spec.task, orient, seed))
            if log:
                log(f"{spec.task} seed={seed} orientation={orient:g}: "
                    + ", ".join(f"{c.model}={c.metrics['accuracy']:.3f}"
                                for c in report.cells[-len(fitted):]))
    return report


def run_remount(spec: ExperimentSpec, placement_jitter_cm: float = 0.3,
                log: Callable[[str], None] | None = None) -> tuple[MetricsReport, MetricsReport]:
    """Same fitted models, test data recorded with the unit shifted by ``placement_jitter_cm``."""
    before = run_grid(spec, log=log)
    rng = np.random.default_rng(fs.derive_seed(spec.seeds[0], "remount", placement_jitter_cm))
    moved = fs.SensorArray.linear().perturbed(placement_jitter_cm, rng)
    after = run_grid(spec, array=moved, log=log)
    return before, after


def run_class_count(task: str = "face8", seed: int = 0, model: str = "encoder+max-margin",
                    spec: ExperimentSpec | None = None) -> dict[int, float]:
    """Accuracy when only the first m classes are in play, m = 2..n (event level, orientation 0)."""
    spec = spec or ExperimentSpec(task=task, seeds=(seed,), models=(model,))
    cfg = PipelineConfig(profile=calibration_profile(seed))
    encoder, _ = pretrained_encoder(seed, spec.pretrain_users, True, spec.pretrain_epochs,
                                    spec.pretrain_duration_s)
    train = _events(fs.synth_gesture_corpus(task, spec.k_shot, fs.derive_seed(seed, "train"), spec.user_id), cfg)
    test = _events(fs.synth_gesture_corpus(task, spec.n_test_per_class, fs.derive_seed(seed, "test", 0.0),
                                           spec.user_id), cfg)
    out = {}
    for m in range(2, fs.n_classes(task) + 1):
        sel_tr = train.labels < m
        sel_te = test.labels < m
        sub_tr = _EventSet(train.labels[sel_tr], [w for w, s in zip(train.windows, sel_tr) if s])
        sub_te = _EventSet(test.labels[sel_te], [w for w, s in zip(test.windows, sel_te) if s])
        fitted = fit_models(sub_tr, [model], encoder, seed)[0]
        out[m] = evaluate_model(fitted, sub_te, m, task, 0.0, seed).metrics["accuracy"]
    return out


# --- latency ------------------------------------------------------------------------

@dataclass(frozen=True)
class LatencyReport:
    n_samples: int
    mean_ms: float
    p99_ms: float
    max_ms: float
    n_events: int

    @property
    def real_time(self) -> bool:
        return self.mean_ms < PERIOD_MS


def benchmark_latency(model: FittedModel, cfg: PipelineConfig, data: np.ndarray,
                      n_samples: int = 1000) -> LatencyReport:
    """Time ``StreamingPipeline.push`` over the first ``n_samples`` frames of ``data`` (cycled)."""
    data = np.asarray(data, dtype=float)
    if len(data) == 0:
        raise ValueError("no samples to stream")
    idx = np.arange(n_samples) % len(data)
    pipe = StreamingPipeline(model.predict, cfg)
    times = np.empty(n_samples)
    n_events = 0
    for j, i in enumerate(idx):
        t0 = time.perf_counter()
        ev = pipe.push(data[i])
        times[j] = (time.perf_counter() - t0) * 1000.0
        n_events += ev is not None
    return LatencyReport(n_samples, float(times.mean()), float(np.percentile(times, 99)),
                         float(times.max()), n_events)


def latency_stream(task: str, seed: int, n_per_class: int = 2) -> np.ndarray:
    """Concatenated gesture recordings as one continuous stream."""
    recs = fs.synth_gesture_corpus(task, n_per_class, fs.derive_seed(seed, "bench"))
    return np.concatenate([r.data for r in recs])


# --- artifacts -----------------------------------------------------------------------

def write_manifest(path: str | os.PathLike, config: dict, seeds: Sequence[int] = (),
                   extra: dict | None = None) -> Path:
    """Plain key=value manifest: fully resolved config, its hash and the seeds."""
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    lines = ["format=magsense-manifest/1", f"config_hash={config_hash(config)}",
             "seeds=" + ",".join(str(s) for s in seeds)]
    lines += [f"config.{k}={json.dumps(v, default=str)}" for k, v in sorted(config.items())]
    for k, v in sorted((extra or {}).items()):
        lines.append(f"{k}={v}")
    p.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return p


def write_plot_csv(path: str | os.PathLike, xname: str, yname: str, points: dict) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with open(p, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([xname, yname])
        for x in sorted(points):
            w.writerow([x, f"{points[x]:.6f}"])
    return p
