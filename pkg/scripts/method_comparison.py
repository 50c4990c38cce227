"""Compare basis configurations for both pipelines on the desk ensemble.

    python3 scripts/method_comparison.py --out results/comparison
"""

import argparse
import json
import time
from pathlib import Path

from msrom import pipeline as pl
from msrom.config import parse_config

CASES = (("method1", "5+0"), ("method1", "2+3"), ("method2", "2+3"), ("method2", "2+1+1+1"))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("-c", "--config", help="base INI config (defaults otherwise)")
    ap.add_argument("--set", action="append", default=[], dest="overrides")
    ap.add_argument("--workers", type=int, default=0)
    ap.add_argument("--out", default="results/comparison")
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for method, counts in CASES:
        cfg = parse_config(args.config, [*args.overrides, f"basis.counts={counts}"])
        t0 = time.perf_counter()
        run = pl.run_method1 if method == "method1" else pl.run_method2
        res = run(cfg, workers=args.workers)
        tag = f"{method}_{counts.replace('+', '-')}"
        pl.write_errors_csv(out / f"{tag}_errors.csv", res.report)
        pl.write_stats_csv(out / f"{tag}_stats.csv", res.report)
        row = {"method": method, "counts": counts, "dimension": res.space.dim,
               "wall_time": time.perf_counter() - t0}
        for step in ("Step1", "Step2", "Step3"):
            s = res.report.stats(step)
            row[step] = {"mean_ea": float(s["mean_ea"][-1]), "mean_el2": float(s["mean_el2"][-1])}
        rows.append(row)
        print(f"{method:8s} {counts:8s} dim {row['dimension']:4d}  "
              + "  ".join(f"{st} {row[st]['mean_ea']:.4f}" for st in ("Step1", "Step2", "Step3"))
              + f"  ({row['wall_time']:.1f} s)")
    (out / "summary.json").write_text(json.dumps(rows, indent=2) + "\n")


if __name__ == "__main__":
    main()
