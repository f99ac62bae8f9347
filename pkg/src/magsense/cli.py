"""Command-line entry point: ``magsense <subcommand> [options]``.

Option values resolve as built-in default < config file < MAGSENSE_* environment
variable < command-line flag. The config file is INI text; keys in
``[magsense]`` apply to every subcommand and keys in a section named after the
subcommand apply to that subcommand only. Every run writes
``manifest_<subcommand>.txt`` with the resolved configuration into --out-dir.

Exit codes: 0 success, 1 runtime or numeric failure, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from . import evalharness as eh
from . import fieldsim as fs
from .classify import (BASELINE_KINDS, KINDS, ClassifierModel, FewShotSet, confusion_matrix, fit,
                       flatten_windows, macro_ovr_auc, metrics_from_confusion, vote_scores)
from .core import N_CHANNELS, WINDOW_LEN, Recording, read_recording, write_events
from .encoder import EncoderModel, TrainConfig, TrainingDivergedError, pretrain
from .magdelta import DEFAULT_HYSTERESIS_FRAMES, DEFAULT_MIN_EVENT_FRAMES, DEFAULT_THRESHOLD_UT
from .pipeline import PipelineConfig, extract_events, infer_recording, main_event, vote
from .preprocess import CalibrationProfile, CalibrationQualityError, calibrate_device_bias

ENV_PREFIX = "MAGSENSE_"
SIM_TASKS = fs.TASKS + ("free", "calibration")
EXPERIMENTS = ("grid", "remount", "class-count")


class UsageError(Exception):
    """Bad arguments or unusable inputs (exit code 2)."""


@dataclass(frozen=True)
class Option:
    name: str                  # flag without dashes, e.g. "threshold-ut"
    type: Callable[[str], Any]
    default: Any
    help: str

    @property
    def key(self) -> str:
        return self.name.replace("-", "_")


def _bool(s: str) -> bool:
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


GLOBAL = [
    Option("seed", int, 0, "random seed"),
    Option("out-dir", str, "out", "directory for all artifacts"),
]
PIPELINE = [
    Option("threshold-ut", float, DEFAULT_THRESHOLD_UT, "trigger threshold on the max pair delta (uT)"),
    Option("min-event-frames", int, DEFAULT_MIN_EVENT_FRAMES, "shortest accepted event"),
    Option("hysteresis-frames", int, DEFAULT_HYSTERESIS_FRAMES, "sub-threshold frames that close an event"),
    Option("magdelta", _bool, True, "subtract the background captured at event onset"),
    Option("profile", str, "", "calibration profile file (default: zero bias, 50 uT)"),
]
COMMANDS: dict[str, list[Option]] = {
    "simulate": [
        Option("task", str, "face8", f"one of {', '.join(SIM_TASKS)}"),
        Option("n", int, 5, "recordings per class (free: number of users)"),
        Option("orientation", float, 0.0, "yaw of the environment field in degrees"),
        Option("user", int, 0, "synthetic user id"),
        Option("duration", float, 45.0, "seconds per recording for free / calibration"),
    ],
    "calibrate": [
        Option("input", str, "", "recording of the unit being turned around, no magnet nearby"),
        Option("duration", float, 10.0, "seconds of data to use"),
    ],
    "pretrain": [
        Option("corpus", str, "", "corpus directory (index.csv) of unlabelled recordings"),
        Option("epochs", int, 60, "training epochs"),
        Option("learning-rate", float, 1e-3, "Adam step size"),
        Option("batch-size", int, 32, "contexts per step"),
    ] + PIPELINE,
    "finetune": [
        Option("corpus", str, "", "labelled corpus directory"),
        Option("encoder", str, "", "encoder file; omit for a raw-window baseline"),
        Option("kind", str, "max-margin", f"one of {', '.join(KINDS)}"),
        Option("k", int, 3, "labelled recordings per class"),
    ] + PIPELINE,
    "infer": [
        Option("input", str, "", "recording CSV or corpus directory"),
        Option("encoder", str, "", "encoder file (needed unless the classifier is a raw baseline)"),
        Option("classifier", str, "", "classifier file"),
    ] + PIPELINE,
    "eval": [
        Option("corpus", str, "", "labelled corpus directory; omit to run a synthetic experiment"),
        Option("encoder", str, "", "encoder file"),
        Option("classifier", str, "", "classifier file"),
        Option("experiment", str, "grid", f"synthetic experiment: {', '.join(EXPERIMENTS)}"),
        Option("task", str, "face8", "task for synthetic experiments"),
        Option("epochs", int, 60, "pretraining epochs for synthetic experiments"),
        Option("n-test", int, 10, "test recordings per class and orientation"),
        Option("jitter-cm", float, 0.3, "placement jitter for the remount experiment"),
    ] + PIPELINE,
    "bench": [
        Option("encoder", str, "", "encoder file"),
        Option("classifier", str, "", "classifier file"),
        Option("input", str, "", "recording CSV or corpus directory to stream (default: synthetic)"),
        Option("task", str, "face8", "task of the synthetic stream"),
        Option("n-samples", int, 1000, "frames to stream"),
    ] + PIPELINE,
    "design-study": [
        Option("max-sensors", int, 6, "largest array size"),
        Option("n-train", int, 10, "training passes per direction"),
    ],
}


# --- config resolution ---------------------------------------------------------

def _read_config(path: str | None) -> configparser.ConfigParser:
    cp = configparser.ConfigParser()
    if path:
        if not Path(path).is_file():
            raise UsageError(f"config file not found: {path}")
        try:
            cp.read(path, encoding="utf-8")
        except configparser.Error as e:
            raise UsageError(f"cannot parse config file {path}: {e}") from e
    return cp


def resolve(command: str, flags: dict[str, Any], config_path: str | None,
            environ: dict[str, str] | None = None) -> dict[str, Any]:
    """Fully resolved option values for ``command``."""
    environ = os.environ if environ is None else environ
    cp = _read_config(config_path)
    out: dict[str, Any] = {}
    for opt in GLOBAL + COMMANDS[command]:
        value, source = opt.default, "default"
        for section in ("magsense", command):
            if cp.has_option(section, opt.name):
                value, source = cp.get(section, opt.name), f"config [{section}]"
            elif cp.has_option(section, opt.key):
                value, source = cp.get(section, opt.key), f"config [{section}]"
        env_name = ENV_PREFIX + opt.key.upper()
        if env_name in environ:
            value, source = environ[env_name], env_name
        if flags.get(opt.key) is not None:
            value, source = flags[opt.key], "--" + opt.name
        if isinstance(value, str) and opt.type is not str:
            try:
                value = opt.type(value)
            except ValueError as e:
                raise UsageError(f"bad value for {opt.name} from {source}: {e}") from e
        out[opt.key] = value
    return out


def build_parser() -> argparse.ArgumentParser:
    def common(default):
        # SUPPRESS on the subcommand copy keeps a value given before the subcommand
        p = argparse.ArgumentParser(add_help=False)
        p.add_argument("--config", default=default, help="INI config file")
        for opt in GLOBAL:
            p.add_argument("--" + opt.name, default=default, help=f"{opt.help} (default {opt.default})")
        return p

    parser = argparse.ArgumentParser(prog="magsense", description="Magnetic self-touch sensing toolkit",
                                     parents=[common(None)])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, opts in COMMANDS.items():
        p = sub.add_parser(name, parents=[common(argparse.SUPPRESS)], help=HANDLERS[name].__doc__.splitlines()[0])
        for opt in opts:
            shown = opt.help if "default" in opt.help else f"{opt.help} (default {opt.default!r})"
            p.add_argument("--" + opt.name, default=None, help=shown)
    return parser


# --- helpers -------------------------------------------------------------------

def _out_dir(cfg: dict) -> Path:
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _require_file(path: str, what: str) -> Path:
    if not path:
        raise UsageError(f"missing {what}: pass --{what}")
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{what} not found: {path}")
    return p


def _pipeline_cfg(cfg: dict) -> PipelineConfig:
    profile = CalibrationProfile()
    if cfg.get("profile"):
        profile = CalibrationProfile.load(_require_file(cfg["profile"], "profile"))
    try:
        return PipelineConfig(threshold_uT=cfg["threshold_ut"], min_event_frames=cfg["min_event_frames"],
                              hysteresis_frames=cfg["hysteresis_frames"], magdelta=cfg["magdelta"],
                              profile=profile)
    except ValueError as e:
        raise UsageError(str(e)) from e


def _load_recordings(path: str, what: str = "input") -> list[tuple[Recording, str]]:
    p = _require_file(path, what)
    if p.is_dir():
        if not (p / fs.INDEX_NAME).exists():
            raise UsageError(f"{p} has no {fs.INDEX_NAME}")
        return fs.read_corpus(p)
    return [(read_recording(p), "")]


def _load_models(cfg: dict) -> tuple[ClassifierModel, EncoderModel | None]:
    clf = ClassifierModel.load(_require_file(cfg["classifier"], "classifier"))
    raw = clf.dim == WINDOW_LEN * N_CHANNELS
    encoder = None
    if cfg["encoder"]:
        encoder = EncoderModel.load(_require_file(cfg["encoder"], "encoder"))
    elif not raw:
        raise UsageError("this classifier works on embeddings: pass --encoder")
    if raw:
        encoder = None
    return clf, encoder


def _predictor(clf: ClassifierModel, encoder: EncoderModel | None):
    def predict(windows: np.ndarray):
        feats = flatten_windows(windows) if encoder is None else encoder.encode_batch(windows)
        return clf.predict(feats)
    return predict


def _labelled_events(recs: list[tuple[Recording, str]], pcfg: PipelineConfig):
    out = []
    for rec, label in recs:
        if label == "":
            raise UsageError(f"recording {rec.meta.get('seed', '?')} has no label")
        ev = main_event(extract_events(rec, pcfg))
        out.append((int(label), None if ev is None else ev[1]))
    return out


# --- subcommands ---------------------------------------------------------------

def cmd_simulate(cfg: dict) -> dict:
    """Generate a synthetic corpus (CSV recordings plus index.csv)."""
    task = cfg["task"]
    if task not in SIM_TASKS:
        raise UsageError(f"unknown task {task!r}; expected one of {', '.join(SIM_TASKS)}")
    if cfg["n"] < 1:
        raise UsageError("--n must be >= 1")
    if not 0.0 <= cfg["orientation"] < 360.0:
        raise UsageError("--orientation must lie in [0, 360)")
    seed = cfg["seed"]
    if task == "free":
        recs = fs.free_movement_corpus(range(1, cfg["n"] + 1), seed, cfg["duration"])
    elif task == "calibration":
        env = fs.EnvironmentField().rotated(cfg["orientation"])
        recs = [fs.simulate_calibration_recording(env, fs.derive_seed(seed, "calibration", i), cfg["duration"])
                for i in range(cfg["n"])]
    else:
        recs = fs.synth_gesture_corpus(task, cfg["n"], seed, cfg["user"], cfg["orientation"])
    index = fs.write_corpus(recs, _out_dir(cfg), task, seed)
    print(f"wrote {len(recs)} recordings and {index}")
    return {"n_recordings": len(recs)}


def cmd_calibrate(cfg: dict) -> dict:
    """Estimate per-sensor device bias from a rotation recording."""
    recs = _load_recordings(cfg["input"])
    try:
        prof = calibrate_device_bias(recs[0][0], cfg["duration"])
    except CalibrationQualityError as e:
        raise UsageError(f"calibration rejected: {e}") from e
    except ValueError as e:
        raise UsageError(str(e)) from e
    path = _out_dir(cfg) / "profile.txt"
    prof.save(path)
    print(f"|B_earth| = {prof.earth_field_magnitude:.2f} uT; bias written to {path}")
    return {"earth_field_uT": f"{prof.earth_field_magnitude:.4f}"}


def cmd_pretrain(cfg: dict) -> dict:
    """Contrastive pretraining of the encoder on unlabelled recordings."""
    recs = [r for r, _ in _load_recordings(cfg["corpus"], "corpus")]
    try:
        tcfg = TrainConfig(learning_rate=cfg["learning_rate"], max_epochs=cfg["epochs"],
                           batch_size=cfg["batch_size"], seed=cfg["seed"])
    except ValueError as e:
        raise UsageError(str(e)) from e
    out = _out_dir(cfg)

    def log(epoch, loss):
        print(f"epoch {epoch:3d}  loss {loss:.4f}", flush=True)

    try:
        model, history = pretrain(recs, tcfg, _pipeline_cfg(cfg), log)
    except ValueError as e:
        raise UsageError(str(e)) from e
    model.save(out / "encoder.txt")
    with open(out / "loss.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss"])
        w.writerows((i + 1, f"{v:.8f}") for i, v in enumerate(history))
    print(f"encoder written to {out / 'encoder.txt'}")
    return {"final_loss": f"{history[-1]:.6f}"}


def cmd_finetune(cfg: dict) -> dict:
    """Fit a few-shot classifier on k labelled recordings per class."""
    kind = cfg["kind"]
    if kind not in KINDS:
        raise UsageError(f"unknown classifier kind {kind!r}; expected one of {', '.join(KINDS)}")
    encoder = EncoderModel.load(_require_file(cfg["encoder"], "encoder")) if cfg["encoder"] else None
    if encoder is None and kind not in BASELINE_KINDS:
        raise UsageError(f"{kind} without --encoder is not a raw-window baseline; "
                         f"choose one of {', '.join(BASELINE_KINDS)}")
    pcfg = _pipeline_cfg(cfg)
    recs = _load_recordings(cfg["corpus"], "corpus")
    per_class: dict[str, list] = {}
    for rec, label in recs:
        per_class.setdefault(label, []).append((rec, label))
    if len(per_class) < 2:
        raise UsageError(f"need labelled recordings from at least two classes, found {len(per_class)}")
    k = cfg["k"]
    short = {c: len(v) for c, v in per_class.items() if len(v) < k}
    if short:
        raise UsageError(f"need {k} recordings per class; short classes: {short}")
    chosen = [r for c in sorted(per_class, key=int) for r in per_class[c][:k]]
    events = _labelled_events(chosen, pcfg)
    missing = [i for i, (_, w) in enumerate(events) if w is None]
    if missing:
        raise UsageError(f"{len(missing)} training recording(s) produced no event at this threshold")
    wins = np.concatenate([w for _, w in events])
    labels = np.concatenate([np.full(len(w), lab) for lab, w in events])
    groups = np.concatenate([np.full(len(w), i) for i, (_, w) in enumerate(events)])
    feats = flatten_windows(wins) if encoder is None else encoder.encode_batch(wins)
    try:
        clf = fit(FewShotSet(feats, labels, groups), kind, cfg["seed"])
    except ValueError as e:
        raise UsageError(str(e)) from e
    path = _out_dir(cfg) / "classifier.pkl"
    clf.save(path)
    print(f"{kind} on {len(per_class)} classes x {k} recordings ({len(wins)} windows) -> {path}")
    return {"n_classes": len(per_class), "n_windows": len(wins)}


def cmd_infer(cfg: dict) -> dict:
    """Detect and classify gesture events; writes events.jsonl."""
    clf, encoder = _load_models(cfg)
    pcfg = _pipeline_cfg(cfg)
    predict = _predictor(clf, encoder)
    events = []
    for rec, _ in _load_recordings(cfg["input"]):
        events += infer_recording(rec, predict, pcfg)
    path = _out_dir(cfg) / "events.jsonl"
    write_events(events, path)
    print(f"{len(events)} event(s) -> {path}")
    return {"n_events": len(events)}


def cmd_eval(cfg: dict) -> dict:
    """Score fitted models on a labelled corpus, or run a synthetic experiment."""
    out = _out_dir(cfg)
    if not cfg["corpus"]:
        return _run_experiment(cfg, out)
    clf, encoder = _load_models(cfg)
    pcfg = _pipeline_cfg(cfg)
    predict = _predictor(clf, encoder)
    events = _labelled_events(_load_recordings(cfg["corpus"], "corpus"), pcfg)
    n = len(clf.classes)
    y, preds, scores = [], [], []
    for label, w in events:
        if label >= n:
            raise UsageError(f"label {label} is outside the classifier's {n} classes")
        y.append(label)
        if w is None:
            preds.append(-1)
            scores.append(np.zeros(n))
            continue
        lab, sc = predict(w)
        preds.append(vote(lab, sc))
        scores.append(vote_scores(lab, clf.classes))
    cm = confusion_matrix(y, preds, n)
    m = metrics_from_confusion(cm)
    m["auc"] = macro_ovr_auc(y, np.array(scores), n)
    name = ("encoder+" if encoder is not None else "") + clf.kind
    task = Path(cfg["corpus"]).name
    with open(out / "report.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(eh.REPORT_FIELDS)
        w.writerow([task, name] + [f"{m[k]:.6f}" for k in eh.REPORT_FIELDS[2:]])
    np.savetxt(out / "confusion.csv", cm, fmt="%d", delimiter=",")
    print(f"{name}: accuracy {m['accuracy']:.4f}  f1 {m['f1']:.4f}  auc {m['auc']:.4f}")
    return {"accuracy": f"{m['accuracy']:.6f}"}


def _run_experiment(cfg: dict, out: Path) -> dict:
    exp = cfg["experiment"]
    if exp not in EXPERIMENTS:
        raise UsageError(f"unknown experiment {exp!r}; expected one of {', '.join(EXPERIMENTS)}")
    try:
        spec = eh.ExperimentSpec(name=exp, task=cfg["task"], seeds=(cfg["seed"],),
                                 magdelta_enabled=cfg["magdelta"], pretrain_epochs=cfg["epochs"],
                                 n_test_per_class=cfg["n_test"])
    except ValueError as e:
        raise UsageError(str(e)) from e
    log = lambda s: print(s, flush=True)  # noqa: E731
    if exp == "grid":
        report = eh.run_grid(spec, log=log)
        report.write(out)
        for name in spec.models:
            print(f"{name}: mean accuracy {report.mean(name):.4f}")
        return {"spec_hash": spec.config_hash()}
    if exp == "remount":
        before, after = eh.run_remount(spec, cfg["jitter_cm"], log=log)
        before.write(out, "report_before")
        after.write(out, "report_after")
        for name in spec.models:
            print(f"{name}: {before.mean(name):.4f} -> {after.mean(name):.4f}")
        return {"spec_hash": spec.config_hash()}
    acc = eh.run_class_count(spec.task, cfg["seed"], spec=spec)
    eh.write_plot_csv(out / "class_count.csv", "n_classes", "accuracy", acc)
    print(", ".join(f"{m}: {a:.3f}" for m, a in acc.items()))
    return {"spec_hash": spec.config_hash()}


def cmd_bench(cfg: dict) -> dict:
    """Stream frames through trigger, encoder and classifier and time each one."""
    clf, encoder = _load_models(cfg)
    pcfg = _pipeline_cfg(cfg)
    if cfg["input"]:
        data = np.concatenate([r.data for r, _ in _load_recordings(cfg["input"])])
    else:
        if cfg["task"] not in fs.TASKS:
            raise UsageError(f"unknown task {cfg['task']!r}")
        data = eh.latency_stream(cfg["task"], cfg["seed"])
    if cfg["n_samples"] < 1:
        raise UsageError("--n-samples must be >= 1")
    name = ("encoder+" if encoder is not None else "") + clf.kind
    rep = eh.benchmark_latency(eh.FittedModel(name, clf, encoder), pcfg, data, cfg["n_samples"])
    lines = [f"n_samples={rep.n_samples}", f"mean_ms={rep.mean_ms:.4f}", f"p99_ms={rep.p99_ms:.4f}",
             f"max_ms={rep.max_ms:.4f}", f"period_ms={eh.PERIOD_MS:.4f}", f"real_time={rep.real_time}",
             f"n_events={rep.n_events}"]
    (_out_dir(cfg) / "latency.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"mean {rep.mean_ms:.2f} ms, p99 {rep.p99_ms:.2f} ms per sample "
          f"(sampling period {eh.PERIOD_MS:.1f} ms)")
    return {"mean_ms": f"{rep.mean_ms:.4f}"}


def cmd_design_study(cfg: dict) -> dict:
    """Accuracy versus sensor count on jittered straight passes."""
    if cfg["max_sensors"] < 1:
        raise UsageError("--max-sensors must be >= 1")
    acc = eh.run_design_study(cfg["max_sensors"], cfg["seed"], n_train=cfg["n_train"])
    eh.write_plot_csv(_out_dir(cfg) / "design_study.csv", "n_sensors", "accuracy", acc)
    for n, a in acc.items():
        print(f"{n} sensor(s): {a:.4f}")
    return {"classifier": "linear max-margin C=1 on smoothed, resampled, field-normalized passes"}


HANDLERS: dict[str, Callable[[dict], dict]] = {
    "simulate": cmd_simulate, "calibrate": cmd_calibrate, "pretrain": cmd_pretrain,
    "finetune": cmd_finetune, "infer": cmd_infer, "eval": cmd_eval, "bench": cmd_bench,
    "design-study": cmd_design_study,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:  # argparse already printed the usage message
        return int(e.code or 0)
    try:
        cfg = resolve(args.command, vars(args), args.config)
    except UsageError as e:
        print(f"magsense {args.command}: error: {e}", file=sys.stderr)
        return 2
    code, extra = 0, {}
    try:
        extra = HANDLERS[args.command](cfg) or {}
    except UsageError as e:
        print(f"magsense {args.command}: error: {e}", file=sys.stderr)
        code, extra = 2, {"error": str(e)}
    except (TrainingDivergedError, FloatingPointError, RuntimeError) as e:
        print(f"magsense {args.command}: failed: {e}", file=sys.stderr)
        code, extra = 1, {"error": str(e)}
    eh.write_manifest(_out_dir(cfg) / f"manifest_{args.command}.txt",
                      {"command": args.command, **cfg}, [cfg["seed"]], {"exit_code": code, **extra})
    return code


if __name__ == "__main__":
    sys.exit(main())
