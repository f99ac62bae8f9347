"""Per-sample streaming latency of the full pipeline against the sampling period.

    python3 scripts/run_latency.py --n-samples 1000
"""
import argparse

from magsense import evalharness as eh
from magsense import fieldsim as fs
from magsense.pipeline import PipelineConfig

MODEL = "encoder+max-margin"


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--task", default="face8")
    ap.add_argument("--n-samples", type=int, default=1000)
    ap.add_argument("--epochs", type=int, default=60)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    enc, _ = eh.pretrained_encoder(args.seed, range(1, 9), True, args.epochs)
    cfg = PipelineConfig(profile=eh.calibration_profile(args.seed))
    train = eh._events(fs.synth_gesture_corpus(args.task, 3, fs.derive_seed(args.seed, "train")), cfg)
    model = eh.fit_models(train, [MODEL], enc, args.seed)[0]
    rep = eh.benchmark_latency(model, cfg, eh.latency_stream(args.task, args.seed), args.n_samples)
    print(f"{rep.n_samples} samples, {rep.n_events} events: mean {rep.mean_ms:.3f} ms, "
          f"p99 {rep.p99_ms:.3f} ms, max {rep.max_ms:.3f} ms; period {eh.PERIOD_MS:.1f} ms; "
          f"real time: {rep.real_time}")


if __name__ == "__main__":
    main()
