"""Step-3 error against the number of POD modes, plus the POD spectrum.

    python3 scripts/pod_sweep.py --l 5 10 15 20 25 30
"""

import argparse
import csv
from pathlib import Path

import numpy as np

from msrom import pipeline as pl
from msrom.config import parse_config


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("-c", "--config")
    ap.add_argument("--set", action="append", default=[], dest="overrides")
    ap.add_argument("--l", type=int, nargs="+", default=[5, 10, 15, 20, 25])
    ap.add_argument("--method", choices=("method1", "method2"), default="method1")
    ap.add_argument("--workers", type=int, default=0)
    ap.add_argument("--out", default="results/pod_sweep")
    args = ap.parse_args()

    cfg = parse_config(args.config, args.overrides)
    run = pl.run_method1 if args.method == "method1" else pl.run_method2
    res = run(cfg, workers=args.workers, l_values=args.l)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pl.write_errors_csv(out / "errors.csv", res.report)

    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["l", "mean_ea_T", "var_ea_T", "mean_el2_T", "tail"])
        for l in sorted(set(args.l) | {cfg.pod.l}):
            step = "Step3" if l == cfg.pod.l else f"Step3[l={l}]"
            s = res.report.stats(step)
            tail = float(res.pod.eigenvalues[l:].sum())
            w.writerow([l, s["mean_ea"][-1], s["var_ea"][-1], s["mean_el2"][-1], tail])
            print(f"l={l:3d}  mean e_a(T) {s['mean_ea'][-1]:.4f}  var {s['var_ea'][-1]:.2e}  tail {tail:.3e}")
    np.savetxt(out / "pod_eigenvalues.txt", res.pod.eigenvalues)
    print(f"POD rank {res.pod.rank}; step 2 mean e_a(T) {res.report.stats('Step2')['mean_ea'][-1]:.4f}")


if __name__ == "__main__":
    main()
