"""Accuracy versus sensor count, averaged over several seeds.

    python3 scripts/run_design_study.py --seeds 0 1 2 --max-sensors 6 --out out/design_study.csv
"""
import argparse
import time

import numpy as np

from magsense import evalharness as eh
from magsense import fieldsim as fs


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--max-sensors", type=int, default=6)
    ap.add_argument("--standoff-cm", type=float, default=fs.DesignStudyConfig.standoff_cm)
    ap.add_argument("--out", default="out/design_study.csv")
    args = ap.parse_args()

    cfg = fs.DesignStudyConfig(standoff_cm=args.standoff_cm)
    t0 = time.perf_counter()
    runs = [eh.run_design_study(args.max_sensors, s, cfg) for s in args.seeds]
    mean = {n: float(np.mean([r[n] for r in runs])) for n in runs[0]}
    for n, a in mean.items():
        per_seed = " ".join(f"{r[n]:.4f}" for r in runs)
        print(f"{n} sensor(s): mean {a:.4f}  [{per_seed}]")
    print(f"{time.perf_counter() - t0:.1f} s")
    print("wrote", eh.write_plot_csv(args.out, "n_sensors", "accuracy", mean))


if __name__ == "__main__":
    main()
