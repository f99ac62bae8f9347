"""Baseline and ablation table: every model on both tasks, with and without background subtraction.

    python3 scripts/run_table.py --out out/table.csv
"""
import argparse
import csv
from pathlib import Path

from magsense import evalharness as eh


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--tasks", nargs="+", default=["face8", "scratch9"])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--epochs", type=int, default=60)
    ap.add_argument("--n-test", type=int, default=10)
    ap.add_argument("--out", default="out/table.csv")
    args = ap.parse_args()

    rows = []
    for task in args.tasks:
        for magdelta in (True, False):
            spec = eh.ExperimentSpec(task=task, seeds=(args.seed,), magdelta_enabled=magdelta,
                                     pretrain_epochs=args.epochs, n_test_per_class=args.n_test)
            rep = eh.run_grid(spec, log=print)
            for model in spec.models:
                m = rep.summary()[(task, model)]
                rows.append([task, model, magdelta] + [f"{m[k]:.6f}" for k in ("accuracy", "f1", "auc")]
                            + [f"{rep.mean_window_accuracy(model):.6f}"])
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["task", "model", "magdelta", "accuracy", "f1", "auc", "window_accuracy"])
        w.writerows(rows)
    for r in rows:
        print(f"{r[0]:9s} {r[1]:22s} magdelta={str(r[2]):5s} acc={r[3]} f1={r[4]} window={r[6]}")
    print("wrote", out)


if __name__ == "__main__":
    main()
