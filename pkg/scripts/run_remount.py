"""Accuracy before and after remounting the unit with random placement jitter.

    python3 scripts/run_remount.py --jitter-cm 0 0.3 1 2 --out out/remount.csv
"""
import argparse

from magsense import evalharness as eh

MODEL = "encoder+max-margin"


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--task", default="face8")
    ap.add_argument("--jitter-cm", type=float, nargs="+", default=[0.0, 0.3, 1.0, 2.0])
    ap.add_argument("--out", default="out/remount.csv")
    args = ap.parse_args()

    spec = eh.ExperimentSpec(task=args.task, models=(MODEL,))
    points = {}
    for j in args.jitter_cm:
        before, after = eh.run_remount(spec, j)
        points[j] = after.mean(MODEL)
        print(f"jitter {j:g} cm: {before.mean(MODEL):.4f} -> {after.mean(MODEL):.4f}", flush=True)
    print("wrote", eh.write_plot_csv(args.out, "jitter_cm", "accuracy", points))


if __name__ == "__main__":
    main()
